#include "promptshap/report.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <set>

#include "promptshap/errors.hpp"

namespace promptshap {

namespace {

using nlohmann::json;

void require_keys(const json& obj, const std::set<std::string>& allowed,
                  const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) {
            throw Error(ErrorKind::Config, "UnknownReportField",
                        "unknown key '" + key + "' in " + where);
        }
    }
}

json comparison_to_json(const NamedComparison& nc) {
    json c;
    c["name"] = nc.name;
    c["cosine"] = nc.body.cosine;
    c["target_prob_before"] = nc.body.target_prob_before;
    c["target_prob_after"] = nc.body.target_prob_after;
    c["target_prob_delta"] = nc.body.target_prob_delta;
    c["common"] = json::array();
    for (const auto& d : nc.body.common) {
        json e;
        e["name"] = d.name;
        e["before_weight"] = d.before_weight;
        e["after_weight"] = d.after_weight;
        e["abs_delta"] = d.abs_delta;
        e["rel_delta"] = d.rel_delta ? json(*d.rel_delta) : json(nullptr);
        c["common"].push_back(std::move(e));
    }
    c["added"] = json::array();
    for (const auto& a : nc.body.added) {
        json e;
        e["name"] = a.name;
        e["after_weight"] = a.after_weight;
        e["phi_signed"] = a.phi_signed;
        c["added"].push_back(std::move(e));
    }
    c["removed"] = nc.body.removed;
    c["injected_phi"] = json::object();
    for (const auto& [name, phi] : nc.body.injected_phi) {
        c["injected_phi"][name] = phi;
    }
    return c;
}

NamedComparison comparison_from_json(const json& c) {
    require_keys(c,
                 {"name", "cosine", "target_prob_before", "target_prob_after",
                  "target_prob_delta", "common", "added", "removed", "injected_phi"},
                 "comparison");
    NamedComparison nc;
    nc.name = c.at("name").get<std::string>();
    nc.body.cosine = c.at("cosine").get<double>();
    nc.body.target_prob_before = c.at("target_prob_before").get<double>();
    nc.body.target_prob_after = c.at("target_prob_after").get<double>();
    nc.body.target_prob_delta = c.at("target_prob_delta").get<double>();
    for (const auto& e : c.at("common")) {
        require_keys(e, {"name", "before_weight", "after_weight", "abs_delta", "rel_delta"},
                     "comparison.common entry");
        FieldDelta d;
        d.name = e.at("name").get<std::string>();
        d.before_weight = e.at("before_weight").get<double>();
        d.after_weight = e.at("after_weight").get<double>();
        d.abs_delta = e.at("abs_delta").get<double>();
        if (!e.at("rel_delta").is_null()) d.rel_delta = e.at("rel_delta").get<double>();
        nc.body.common.push_back(std::move(d));
    }
    for (const auto& e : c.at("added")) {
        require_keys(e, {"name", "after_weight", "phi_signed"}, "comparison.added entry");
        nc.body.added.push_back(AddedField{e.at("name").get<std::string>(),
                                           e.at("after_weight").get<double>(),
                                           e.at("phi_signed").get<double>()});
    }
    for (const auto& r : c.at("removed")) {
        nc.body.removed.push_back(r.get<std::string>());
    }
    for (const auto& [name, phi] : c.at("injected_phi").items()) {
        nc.body.injected_phi.emplace_back(name, phi.get<double>());
    }
    return nc;
}

std::string_view csv_class(InfoClass c) {
    return c == InfoClass::HighInformation ? "high" : "low";
}

}  // namespace

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc{}) {
        throw Error(ErrorKind::Io, "NumberFormatFailed", "cannot format double");
    }
    return std::string(buf, ptr);
}

Report build_report(const PromptTemplate& tmpl, const AttributionVector& attribution,
                    const NormalizedAttribution& normalized, const NoiseBreakdown& noise,
                    std::string oracle_identity, std::string template_hash) {
    Report report;
    report.template_hash = std::move(template_hash);
    report.oracle_identity = std::move(oracle_identity);
    report.method = std::string(to_string(attribution.method));
    if (attribution.method == AttributionMethod::MonteCarlo) {
        report.iterations = attribution.iterations;
        report.seed = attribution.seed;
    }
    report.oracle_calls = attribution.oracle_calls;
    report.phi0 = attribution.phi0;
    report.f_x = attribution.f_x;
    report.efficiency_residual = efficiency_residual(attribution);
    report.degenerate_normalization = normalized.degenerate;
    for (int i = 1; i <= tmpl.field_count(); ++i) {
        const FieldDescriptor& desc = tmpl.field(i);
        ReportField rf;
        rf.index = i;
        rf.name = desc.name;
        rf.info_class = desc.info_class;
        rf.phi_signed = attribution.phi[static_cast<std::size_t>(i - 1)];
        rf.weight_normalized = normalized.weights[static_cast<std::size_t>(i - 1)];
        if (!attribution.std_error.empty()) {
            rf.std_error = attribution.std_error[static_cast<std::size_t>(i - 1)];
        }
        report.fields.push_back(std::move(rf));
    }
    report.noise_high_share = noise.high_info_share;
    report.noise_low_share = noise.low_info_share;
    return report;
}

std::string report_to_json_text(const Report& report) {
    json doc;
    doc["schema_version"] = report.schema_version;
    doc["template_hash"] = report.template_hash;
    doc["oracle"] = report.oracle_identity;
    doc["method"] = report.method;
    if (report.iterations) doc["iterations"] = *report.iterations;
    if (report.seed) doc["seed"] = *report.seed;
    doc["oracle_calls"] = report.oracle_calls;
    doc["phi0"] = report.phi0;
    doc["f_x"] = report.f_x;
    doc["efficiency_residual"] = report.efficiency_residual;
    if (report.degenerate_normalization) doc["degenerate_normalization"] = true;
    doc["fields"] = json::array();
    for (const auto& f : report.fields) {
        json e;
        e["index"] = f.index;
        e["name"] = f.name;
        e["info_class"] = std::string(csv_class(f.info_class));
        e["phi_signed"] = f.phi_signed;
        e["weight_normalized"] = f.weight_normalized;
        if (f.std_error) e["std_error"] = *f.std_error;
        if (f.injected) e["injected"] = true;
        doc["fields"].push_back(std::move(e));
    }
    doc["noise"] = json{{"high_share", report.noise_high_share},
                        {"low_share", report.noise_low_share}};
    if (!report.comparisons.empty()) {
        doc["comparisons"] = json::array();
        for (const auto& nc : report.comparisons) {
            doc["comparisons"].push_back(comparison_to_json(nc));
        }
    }
    return doc.dump(2) + "\n";
}

Report report_from_json_text(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, "InvalidReport",
                    std::string("report is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("schema_version")) {
        throw Error(ErrorKind::Config, "InvalidReport", "report lacks a schema_version");
    }
    if (doc["schema_version"].get<std::string>() != "1") {
        throw Error(ErrorKind::Config, "InvalidReport",
                    "unsupported schema_version " + doc["schema_version"].dump());
    }
    require_keys(doc,
                 {"schema_version", "template_hash", "oracle", "method", "iterations", "seed",
                  "oracle_calls", "phi0", "f_x", "efficiency_residual",
                  "degenerate_normalization", "fields", "noise", "comparisons"},
                 "report");
    Report report;
    try {
        report.template_hash = doc.at("template_hash").get<std::string>();
        report.oracle_identity = doc.at("oracle").get<std::string>();
        report.method = doc.at("method").get<std::string>();
        if (doc.contains("iterations")) report.iterations = doc["iterations"].get<long long>();
        if (doc.contains("seed")) report.seed = doc["seed"].get<std::uint64_t>();
        report.oracle_calls = doc.at("oracle_calls").get<long long>();
        report.phi0 = doc.at("phi0").get<double>();
        report.f_x = doc.at("f_x").get<double>();
        report.efficiency_residual = doc.at("efficiency_residual").get<double>();
        if (doc.contains("degenerate_normalization")) {
            report.degenerate_normalization = doc["degenerate_normalization"].get<bool>();
        }
        for (const auto& e : doc.at("fields")) {
            require_keys(e,
                         {"index", "name", "info_class", "phi_signed", "weight_normalized",
                          "std_error", "injected"},
                         "report field");
            ReportField f;
            f.index = e.at("index").get<int>();
            f.name = e.at("name").get<std::string>();
            const std::string cls = e.at("info_class").get<std::string>();
            if (cls != "high" && cls != "low") {
                throw Error(ErrorKind::Config, "InvalidReport",
                            "info_class must be 'high' or 'low', got '" + cls + "'");
            }
            f.info_class = cls == "high" ? InfoClass::HighInformation : InfoClass::LowInformation;
            f.phi_signed = e.at("phi_signed").get<double>();
            f.weight_normalized = e.at("weight_normalized").get<double>();
            if (e.contains("std_error")) f.std_error = e["std_error"].get<double>();
            if (e.contains("injected")) f.injected = e["injected"].get<bool>();
            report.fields.push_back(std::move(f));
        }
        const auto& noise = doc.at("noise");
        require_keys(noise, {"high_share", "low_share"}, "report noise");
        report.noise_high_share = noise.at("high_share").get<double>();
        report.noise_low_share = noise.at("low_share").get<double>();
        if (doc.contains("comparisons")) {
            for (const auto& c : doc["comparisons"]) {
                report.comparisons.push_back(comparison_from_json(c));
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, "InvalidReport",
                    std::string("report is structurally invalid: ") + e.what());
    }
    return report;
}

std::string report_to_csv(const Report& report) {
    std::string out = "index,name,info_class,phi_signed,weight_normalized,std_error\n";
    for (const auto& f : report.fields) {
        out += std::to_string(f.index);
        out += ',';
        out += f.name;
        out += ',';
        out += csv_class(f.info_class);
        out += ',';
        out += format_double(f.phi_signed);
        out += ',';
        out += format_double(f.weight_normalized);
        out += ',';
        if (f.std_error) out += format_double(*f.std_error);
        out += '\n';
    }
    return out;
}

namespace {

std::string plot_rows(const std::vector<ReportField>& fields) {
    std::string out = "field\tweight\tclass\n";
    for (const auto& f : fields) {
        out += f.name;
        out += '\t';
        out += format_double(f.weight_normalized);
        out += '\t';
        out += csv_class(f.info_class);
        if (f.injected) out += "+injected";
        out += '\n';
    }
    return out;
}

}  // namespace

std::string plot_data(const Report& report) { return plot_rows(report.fields); }

std::string plot_data_grouped(const Report& report) {
    std::vector<ReportField> fields = report.fields;
    std::stable_sort(fields.begin(), fields.end(), [](const ReportField& a, const ReportField& b) {
        if (a.info_class != b.info_class) {
            return a.info_class == InfoClass::HighInformation;
        }
        if (a.weight_normalized != b.weight_normalized) {
            return a.weight_normalized > b.weight_normalized;
        }
        return a.index < b.index;
    });
    return plot_rows(fields);
}

std::string comparisons_to_json_text(const std::vector<NamedComparison>& comparisons) {
    json doc;
    doc["schema_version"] = "1";
    doc["comparisons"] = json::array();
    for (const auto& nc : comparisons) {
        doc["comparisons"].push_back(comparison_to_json(nc));
    }
    return doc.dump(2) + "\n";
}

}  // namespace promptshap
