#pragma once

#include <optional>
#include <string>
#include <vector>

#include "promptshap/analysis.hpp"
#include "promptshap/shapley.hpp"
#include "promptshap/template.hpp"

namespace promptshap {

struct ReportField {
    int index = 0;
    std::string name;
    InfoClass info_class = InfoClass::LowInformation;
    double phi_signed = 0.0;
    double weight_normalized = 0.0;
    std::optional<double> std_error;
    bool injected = false;
};

struct NamedComparison {
    std::string name;
    ComparisonReport body;
};

/// The machine report for one attribution run. Serialization is
/// deterministic: sorted keys, shortest round-trip decimals, no timestamps
/// (wall-clock data lives in a sidecar).
struct Report {
    std::string schema_version = "1";
    std::string template_hash;
    std::string oracle_identity;
    std::string method;
    std::optional<long long> iterations;   ///< Monte Carlo only
    std::optional<std::uint64_t> seed;     ///< Monte Carlo only
    long long oracle_calls = 0;
    double phi0 = 0.0;
    double f_x = 0.0;
    double efficiency_residual = 0.0;
    bool degenerate_normalization = false;
    std::vector<ReportField> fields;  ///< by field index
    double noise_high_share = 0.0;
    double noise_low_share = 0.0;
    std::vector<NamedComparison> comparisons;
};

Report build_report(const PromptTemplate& tmpl, const AttributionVector& attribution,
                    const NormalizedAttribution& normalized, const NoiseBreakdown& noise,
                    std::string oracle_identity, std::string template_hash);

std::string report_to_json_text(const Report& report);

/// Strict reader: unknown keys and a missing/foreign schema_version are
/// rejected.
Report report_from_json_text(std::string_view text);

/// Fixed, versioned column order:
/// index,name,info_class,phi_signed,weight_normalized,std_error
std::string report_to_csv(const Report& report);

/// Tab-separated field/weight/class rows ordered by field index; feeds any
/// plotting tool directly.
std::string plot_data(const Report& report);

/// Same rows grouped by info class (high first), each class by descending
/// weight.
std::string plot_data_grouped(const Report& report);

std::string comparisons_to_json_text(const std::vector<NamedComparison>& comparisons);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

}  // namespace promptshap
