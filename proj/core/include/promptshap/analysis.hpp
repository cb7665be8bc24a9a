#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "promptshap/shapley.hpp"
#include "promptshap/template.hpp"

namespace promptshap {

/// |phi_i| / sum|phi_j| per field: the importance profile reported for a
/// run. An all-zero attribution cannot be normalized; it yields uniform
/// weights with `degenerate` set.
struct NormalizedAttribution {
    std::vector<std::string> names;  ///< by field index
    std::vector<double> weights;
    bool degenerate = false;

    int field_count() const { return static_cast<int>(weights.size()); }
};

NormalizedAttribution normalize_abs(const AttributionVector& a, const PromptTemplate& tmpl);
NormalizedAttribution normalize_abs(const std::vector<double>& phi,
                                    std::vector<std::string> names);

/// Cosine similarity of two weight profiles aligned by field name, after
/// dropping `excluded` names from both sides. Throws FieldMismatch when the
/// remaining name sets differ, ZeroNormVector when either side has no mass.
double cosine_similarity(const NormalizedAttribution& a, const NormalizedAttribution& b,
                         const std::set<std::string>& excluded = {});

struct RankedField {
    int index = 0;
    std::string name;
    double weight = 0.0;
};

/// How much of the attribution mass sits on structural filler vs on
/// decision-critical content.
struct NoiseBreakdown {
    double high_info_share = 0.0;
    double low_info_share = 0.0;
    std::vector<RankedField> high_ranked;  ///< descending weight, ties by index
    std::vector<RankedField> low_ranked;
};

NoiseBreakdown token_noise_share(const NormalizedAttribution& n,
                                 const std::vector<InfoClass>& classes);

struct FieldDelta {
    std::string name;
    double before_weight = 0.0;
    double after_weight = 0.0;
    double abs_delta = 0.0;
    std::optional<double> rel_delta;  ///< empty when the before-weight is zero
};

struct AddedField {
    std::string name;
    double after_weight = 0.0;
    double phi_signed = 0.0;
};

/// Field-by-field weight comparison of two attribution runs aligned by
/// name. Fields present on only one side must be declared in `injected`;
/// they are reported separately and excluded from the cosine.
struct ComparisonReport {
    std::vector<FieldDelta> common;  ///< in the before-profile's field order
    std::vector<AddedField> added;
    std::vector<std::string> removed;
    /// Signed phi of each declared injected field on the after side.
    std::vector<std::pair<std::string, double>> injected_phi;
    double cosine = 0.0;
    double target_prob_before = 0.0;
    double target_prob_after = 0.0;
    double target_prob_delta = 0.0;
};

ComparisonReport compare_attributions(const AttributionVector& before_phi,
                                      const NormalizedAttribution& before,
                                      const AttributionVector& after_phi,
                                      const NormalizedAttribution& after,
                                      const std::set<std::string>& injected = {},
                                      const std::set<std::string>& exclude_from_cosine = {});

/// Percentage rounded to two decimals, half to even; for human summaries
/// only — machine output always carries the raw values.
double rounded_percent(double fraction);

}  // namespace promptshap
