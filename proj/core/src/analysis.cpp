#include "promptshap/analysis.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <map>

#include "promptshap/errors.hpp"

namespace promptshap {

NormalizedAttribution normalize_abs(const std::vector<double>& phi,
                                    std::vector<std::string> names) {
    if (names.size() != phi.size()) {
        throw Error(ErrorKind::Config, "FieldSetMismatch",
                    "attribution and name list disagree on field count");
    }
    NormalizedAttribution out;
    out.names = std::move(names);
    out.weights.resize(phi.size());
    double total = 0.0;
    for (double p : phi) total += std::abs(p);
    if (total == 0.0) {
        out.degenerate = true;
        const double uniform = phi.empty() ? 0.0 : 1.0 / static_cast<double>(phi.size());
        std::fill(out.weights.begin(), out.weights.end(), uniform);
        return out;
    }
    for (std::size_t i = 0; i < phi.size(); ++i) {
        out.weights[i] = std::abs(phi[i]) / total;
    }
    return out;
}

NormalizedAttribution normalize_abs(const AttributionVector& a, const PromptTemplate& tmpl) {
    if (a.field_count() != tmpl.field_count()) {
        throw Error(ErrorKind::Config, "FieldSetMismatch",
                    "attribution does not cover the template's fields");
    }
    return normalize_abs(a.phi, tmpl.field_names());
}

double cosine_similarity(const NormalizedAttribution& a, const NormalizedAttribution& b,
                         const std::set<std::string>& excluded) {
    std::map<std::string, double> left;
    for (std::size_t i = 0; i < a.names.size(); ++i) {
        if (!excluded.count(a.names[i])) left.emplace(a.names[i], a.weights[i]);
    }
    std::map<std::string, double> right;
    for (std::size_t i = 0; i < b.names.size(); ++i) {
        if (!excluded.count(b.names[i])) right.emplace(b.names[i], b.weights[i]);
    }
    if (left.size() != right.size() ||
        !std::equal(left.begin(), left.end(), right.begin(),
                    [](const auto& l, const auto& r) { return l.first == r.first; })) {
        std::string diff;
        for (const auto& [name, _] : left) {
            if (!right.count(name)) diff += " -" + name;
        }
        for (const auto& [name, _] : right) {
            if (!left.count(name)) diff += " +" + name;
        }
        throw Error(ErrorKind::Config, "FieldMismatch",
                    "profiles cover different fields after exclusions:" + diff);
    }
    double dot = 0.0;
    double norm_l = 0.0;
    double norm_r = 0.0;
    auto it_r = right.begin();
    for (const auto& [name, wl] : left) {
        const double wr = it_r->second;
        ++it_r;
        dot += wl * wr;
        norm_l += wl * wl;
        norm_r += wr * wr;
    }
    if (norm_l == 0.0 || norm_r == 0.0) {
        throw Error(ErrorKind::Estimation, "ZeroNormVector",
                    "cosine similarity undefined for a zero-mass profile");
    }
    return dot / (std::sqrt(norm_l) * std::sqrt(norm_r));
}

NoiseBreakdown token_noise_share(const NormalizedAttribution& n,
                                 const std::vector<InfoClass>& classes) {
    if (classes.size() != n.weights.size()) {
        throw Error(ErrorKind::Config, "FieldSetMismatch",
                    "info-class list does not cover the attribution's fields");
    }
    NoiseBreakdown out;
    for (std::size_t i = 0; i < n.weights.size(); ++i) {
        RankedField rf{static_cast<int>(i) + 1, n.names[i], n.weights[i]};
        if (classes[i] == InfoClass::HighInformation) {
            out.high_info_share += rf.weight;
            out.high_ranked.push_back(std::move(rf));
        } else {
            out.low_info_share += rf.weight;
            out.low_ranked.push_back(std::move(rf));
        }
    }
    const auto by_weight_desc = [](const RankedField& a, const RankedField& b) {
        if (a.weight != b.weight) return a.weight > b.weight;
        return a.index < b.index;
    };
    std::sort(out.high_ranked.begin(), out.high_ranked.end(), by_weight_desc);
    std::sort(out.low_ranked.begin(), out.low_ranked.end(), by_weight_desc);
    return out;
}

ComparisonReport compare_attributions(const AttributionVector& before_phi,
                                      const NormalizedAttribution& before,
                                      const AttributionVector& after_phi,
                                      const NormalizedAttribution& after,
                                      const std::set<std::string>& injected,
                                      const std::set<std::string>& exclude_from_cosine) {
    std::map<std::string, std::size_t> after_pos;
    for (std::size_t i = 0; i < after.names.size(); ++i) after_pos.emplace(after.names[i], i);
    std::map<std::string, std::size_t> before_pos;
    for (std::size_t i = 0; i < before.names.size(); ++i) before_pos.emplace(before.names[i], i);

    ComparisonReport report;
    for (std::size_t i = 0; i < before.names.size(); ++i) {
        const std::string& name = before.names[i];
        auto it = after_pos.find(name);
        if (it == after_pos.end()) {
            if (!injected.count(name)) {
                throw Error(ErrorKind::Config, "FieldMismatch",
                            "field '" + name + "' disappeared without being declared injected");
            }
            report.removed.push_back(name);
            continue;
        }
        FieldDelta delta;
        delta.name = name;
        delta.before_weight = before.weights[i];
        delta.after_weight = after.weights[it->second];
        delta.abs_delta = delta.after_weight - delta.before_weight;
        if (delta.before_weight != 0.0) {
            delta.rel_delta = delta.abs_delta / delta.before_weight;
        }
        report.common.push_back(std::move(delta));
    }
    for (std::size_t i = 0; i < after.names.size(); ++i) {
        const std::string& name = after.names[i];
        if (before_pos.count(name)) continue;
        if (!injected.count(name)) {
            throw Error(ErrorKind::Config, "FieldMismatch",
                        "field '" + name + "' appeared without being declared injected");
        }
        report.added.push_back(AddedField{name, after.weights[i], after_phi.phi[i]});
    }

    for (const auto& name : injected) {
        auto it = after_pos.find(name);
        if (it != after_pos.end()) {
            report.injected_phi.emplace_back(name, after_phi.phi[it->second]);
        }
    }

    std::set<std::string> cosine_excluded = exclude_from_cosine;
    cosine_excluded.insert(injected.begin(), injected.end());
    report.cosine = cosine_similarity(before, after, cosine_excluded);

    report.target_prob_before = before_phi.f_x;
    report.target_prob_after = after_phi.f_x;
    report.target_prob_delta = after_phi.f_x - before_phi.f_x;
    return report;
}

double rounded_percent(double fraction) {
    // nearbyint under the default FE_TONEAREST mode rounds half to even.
    return std::nearbyint(fraction * 10000.0) / 100.0;
}

}  // namespace promptshap
