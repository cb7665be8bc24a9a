#include "promptshap/experiment.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "promptshap/errors.hpp"
#include "promptshap/hash.hpp"

namespace promptshap {

namespace {

using nlohmann::json;

void require_keys(const json& obj, const std::set<std::string>& allowed,
                  const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) {
            throw Error(ErrorKind::Config, "InvalidConfig",
                        "unknown key '" + key + "' in " + where);
        }
    }
}

json load_json_file(const std::filesystem::path& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, "FileOpenFailed", "cannot open " + what + " " + path.string());
    }
    try {
        json doc;
        in >> doc;
        return doc;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, "InvalidConfig",
                    what + " " + path.string() + " is not valid JSON: " + e.what());
    }
}

std::pair<double, std::map<std::string, double>> parse_additive_weights(
    const json& doc, const std::string& where) {
    require_keys(doc, {"base", "weights"}, where);
    if (!doc.contains("base") || !doc["base"].is_number()) {
        throw Error(ErrorKind::Config, "InvalidConfig", where + " needs a numeric 'base'");
    }
    if (!doc.contains("weights") || !doc["weights"].is_object()) {
        throw Error(ErrorKind::Config, "InvalidConfig",
                    where + " needs a 'weights' object of field name -> number");
    }
    std::map<std::string, double> weights;
    for (const auto& [name, w] : doc["weights"].items()) {
        if (!w.is_number()) {
            throw Error(ErrorKind::Config, "InvalidConfig",
                        "weight for '" + name + "' must be a number");
        }
        weights[name] = w.get<double>();
    }
    return {doc["base"].get<double>(), std::move(weights)};
}

std::uint64_t parse_seed_text(const std::string& text, const std::string& what) {
    try {
        std::size_t consumed = 0;
        const std::uint64_t seed = std::stoull(text, &consumed);
        if (consumed != text.size()) throw std::invalid_argument(text);
        return seed;
    } catch (const std::exception&) {
        throw Error(ErrorKind::Config, "InvalidModelSpec", what + " must be an integer seed");
    }
}

OracleSpec oracle_spec_from_json(const json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object() || !doc.contains("kind")) {
        throw Error(ErrorKind::Config, "InvalidConfig", "oracle block needs a 'kind'");
    }
    const std::string kind = doc["kind"].get<std::string>();
    OracleSpec spec;
    if (kind == "synthetic-additive") {
        require_keys(doc, {"kind", "weights", "base"}, "oracle block");
        spec.kind = OracleSpec::Kind::SyntheticAdditive;
        if (doc.contains("weights") && doc["weights"].is_string()) {
            const auto path = base_dir / doc["weights"].get<std::string>();
            auto [base, weights] = parse_additive_weights(
                load_json_file(path, "weights file"), "weights file " + path.string());
            spec.base = base;
            spec.weights_by_name = std::move(weights);
        } else {
            json inline_weights;
            if (doc.contains("base")) inline_weights["base"] = doc["base"];
            if (doc.contains("weights")) inline_weights["weights"] = doc["weights"];
            auto [base, weights] = parse_additive_weights(inline_weights, "oracle block");
            spec.base = base;
            spec.weights_by_name = std::move(weights);
        }
    } else if (kind == "synthetic-logistic" || kind == "synthetic-tabular") {
        require_keys(doc, {"kind", "seed"}, "oracle block");
        if (!doc.contains("seed") || !doc["seed"].is_number_unsigned()) {
            throw Error(ErrorKind::Config, "InvalidConfig",
                        kind + " oracle needs an unsigned 'seed'");
        }
        spec.kind = kind == "synthetic-logistic" ? OracleSpec::Kind::SyntheticLogistic
                                                 : OracleSpec::Kind::SyntheticTabular;
        spec.seed = doc["seed"].get<std::uint64_t>();
    } else if (kind == "remote") {
        require_keys(doc,
                     {"kind", "url", "model", "api_key_env", "top_logprobs", "max_retries",
                      "timeout_sec", "sample_count", "max_concurrent", "label_token_ids"},
                     "oracle block");
        spec.kind = OracleSpec::Kind::Remote;
        spec.remote.base_url = doc.at("url").get<std::string>();
        spec.remote.model = doc.at("model").get<std::string>();
        if (doc.contains("api_key_env")) {
            spec.remote.api_key_env = doc["api_key_env"].get<std::string>();
        }
        if (doc.contains("top_logprobs")) spec.remote.top_logprobs = doc["top_logprobs"].get<int>();
        if (doc.contains("max_retries")) spec.remote.max_retries = doc["max_retries"].get<int>();
        if (doc.contains("timeout_sec")) spec.remote.timeout_sec = doc["timeout_sec"].get<int>();
        if (doc.contains("sample_count")) spec.remote.sample_count = doc["sample_count"].get<int>();
        if (doc.contains("max_concurrent")) {
            spec.remote.max_concurrent = doc["max_concurrent"].get<int>();
        }
        if (doc.contains("label_token_ids")) {
            for (const auto& [label, id] : doc["label_token_ids"].items()) {
                spec.remote.label_token_ids[label] = id.get<int>();
            }
        }
    } else {
        throw Error(ErrorKind::Config, "InvalidConfig", "unknown oracle kind '" + kind + "'");
    }
    return spec;
}

/// Values for one variant: base values overridden, then filtered to the
/// template's field set (full coverage still required).
PromptVector resolve_values(const PromptTemplate& tmpl,
                            const std::map<std::string, std::string>& base,
                            const std::map<std::string, std::string>& overrides) {
    std::map<std::string, std::string> merged = base;
    for (const auto& [name, value] : overrides) merged[name] = value;
    std::map<std::string, std::string> filtered;
    for (const std::string& name : tmpl.field_names()) {
        auto it = merged.find(name);
        if (it != merged.end()) filtered.emplace(name, it->second);
    }
    return PromptVector::from_names(tmpl, filtered);
}

ExperimentConfig::Kind parse_kind(const std::string& text) {
    if (text == "attribution") return ExperimentConfig::Kind::Attribution;
    if (text == "framing") return ExperimentConfig::Kind::Framing;
    if (text == "perturbation") return ExperimentConfig::Kind::Perturbation;
    throw Error(ErrorKind::Config, "InvalidConfig",
                "experiment must be attribution, framing or perturbation, got '" + text + "'");
}

std::string_view kind_name(ExperimentConfig::Kind kind) {
    switch (kind) {
        case ExperimentConfig::Kind::Attribution: return "attribution";
        case ExperimentConfig::Kind::Framing: return "framing";
        case ExperimentConfig::Kind::Perturbation: return "perturbation";
    }
    return "attribution";
}

}  // namespace

OracleSpec parse_model_flag(const std::string& flag) {
    OracleSpec spec;
    if (flag.rfind("synthetic:additive:", 0) == 0) {
        const std::string file = flag.substr(std::string("synthetic:additive:").size());
        auto [base, weights] = parse_additive_weights(
            load_json_file(file, "weights file"), "weights file " + file);
        spec.kind = OracleSpec::Kind::SyntheticAdditive;
        spec.base = base;
        spec.weights_by_name = std::move(weights);
        return spec;
    }
    if (flag.rfind("synthetic:logistic:", 0) == 0) {
        spec.kind = OracleSpec::Kind::SyntheticLogistic;
        spec.seed = parse_seed_text(flag.substr(std::string("synthetic:logistic:").size()),
                                    "synthetic:logistic oracle");
        return spec;
    }
    if (flag.rfind("synthetic:tabular:", 0) == 0) {
        spec.kind = OracleSpec::Kind::SyntheticTabular;
        spec.seed = parse_seed_text(flag.substr(std::string("synthetic:tabular:").size()),
                                    "synthetic:tabular oracle");
        return spec;
    }
    if (flag.rfind("remote:", 0) == 0) {
        const std::string rest = flag.substr(std::string("remote:").size());
        const auto split = rest.rfind(':');
        if (split == std::string::npos || split == 0 || split + 1 == rest.size()) {
            throw Error(ErrorKind::Config, "InvalidModelSpec",
                        "remote oracle spec must be remote:URL:MODEL");
        }
        spec.kind = OracleSpec::Kind::Remote;
        spec.remote.base_url = rest.substr(0, split);
        spec.remote.model = rest.substr(split + 1);
        return spec;
    }
    throw Error(ErrorKind::Config, "InvalidModelSpec",
                "unrecognized model spec '" + flag +
                    "' (expected synthetic:additive:FILE, synthetic:logistic:SEED, "
                    "synthetic:tabular:SEED or remote:URL:MODEL)");
}

std::shared_ptr<const Oracle> build_oracle(const OracleSpec& spec,
                                           std::shared_ptr<const CompositeMatcher> matcher) {
    if (spec.kind == OracleSpec::Kind::Remote) {
        return std::make_shared<RemoteOracle>(spec.remote);
    }
    if (!matcher) {
        throw Error(ErrorKind::Config, "InvalidConfig",
                    "synthetic oracles need a template and values to bind to");
    }
    switch (spec.kind) {
        case OracleSpec::Kind::SyntheticAdditive: {
            const PromptTemplate& tmpl = matcher->prompt_template();
            for (const auto& [name, _] : spec.weights_by_name) {
                if (!tmpl.find_field(name)) {
                    throw Error(ErrorKind::Config, "UnknownFieldName",
                                "additive weight for '" + name +
                                    "', which is not a template field");
                }
            }
            std::vector<double> weights(static_cast<std::size_t>(tmpl.field_count()), 0.0);
            for (int i = 1; i <= tmpl.field_count(); ++i) {
                auto it = spec.weights_by_name.find(tmpl.field(i).name);
                if (it != spec.weights_by_name.end()) {
                    weights[static_cast<std::size_t>(i - 1)] = it->second;
                }
            }
            return std::make_shared<SyntheticAdditiveOracle>(std::move(matcher), spec.base,
                                                             std::move(weights));
        }
        case OracleSpec::Kind::SyntheticLogistic:
            return std::make_shared<SyntheticLogisticOracle>(std::move(matcher), spec.seed);
        case OracleSpec::Kind::SyntheticTabular:
            return std::make_shared<SyntheticTabularOracle>(std::move(matcher), spec.seed);
        case OracleSpec::Kind::Remote: break;
    }
    throw Error(ErrorKind::Config, "InvalidConfig", "unreachable oracle kind");
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    const json doc = load_json_file(path, "experiment config");
    if (!doc.is_object()) {
        throw Error(ErrorKind::Config, "InvalidConfig", "experiment config must be a JSON object");
    }
    require_keys(doc,
                 {"experiment", "template", "values", "reference_token", "labels", "target",
                  "oracle", "estimator", "cache", "variants", "analysis"},
                 "experiment config");
    const auto base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

    ExperimentConfig config;
    config.config_hash = sha256_hex(doc.dump());
    try {
        config.kind = parse_kind(doc.at("experiment").get<std::string>());
        config.template_path = base_dir / doc.at("template").get<std::string>();
        if (doc.at("values").is_string()) {
            config.base_values = load_values_file(base_dir / doc["values"].get<std::string>());
        } else if (doc.at("values").is_object()) {
            for (const auto& [name, v] : doc["values"].items()) {
                if (!v.is_string()) {
                    throw Error(ErrorKind::Config, "InvalidConfig",
                                "value for '" + name + "' must be a string");
                }
                config.base_values[name] = v.get<std::string>();
            }
        } else {
            throw Error(ErrorKind::Config, "InvalidConfig",
                        "'values' must be a file path or an object");
        }
        if (doc.contains("reference_token")) {
            config.reference_token = doc["reference_token"].get<std::string>();
        }
        for (const auto& l : doc.at("labels")) {
            config.spec.labels.push_back(l.get<std::string>());
        }
        config.spec.target = doc.at("target").get<std::string>();
        config.spec.validate();
        config.oracle = oracle_spec_from_json(doc.at("oracle"), base_dir);
        if (doc.contains("estimator")) {
            const auto& est = doc["estimator"];
            require_keys(est,
                         {"method", "iterations", "seed", "parallelism", "exact_limit",
                          "std_error"},
                         "estimator block");
            if (est.contains("method")) config.method = est["method"].get<std::string>();
            if (est.contains("iterations")) {
                config.estimator.iterations = est["iterations"].get<long long>();
            }
            if (est.contains("seed")) config.estimator.seed = est["seed"].get<std::uint64_t>();
            if (est.contains("parallelism")) {
                config.estimator.parallelism = est["parallelism"].get<int>();
            }
            if (est.contains("exact_limit")) {
                config.estimator.exact_limit = est["exact_limit"].get<int>();
            }
            if (est.contains("std_error")) {
                config.estimator.track_std_error = est["std_error"].get<bool>();
            }
        }
        if (config.method != "mc" && config.method != "exact") {
            throw Error(ErrorKind::Config, "InvalidConfig",
                        "estimator method must be 'mc' or 'exact', got '" + config.method + "'");
        }
        config.estimator.validate();
        if (doc.contains("cache")) {
            config.cache_path = base_dir / doc["cache"].get<std::string>();
        }
        if (doc.contains("variants")) {
            std::set<std::string> names{"base"};
            for (const auto& v : doc["variants"]) {
                require_keys(v, {"name", "values", "injected"}, "variant block");
                VariantConfig variant;
                variant.name = v.at("name").get<std::string>();
                if (!names.insert(variant.name).second) {
                    throw Error(ErrorKind::Config, "InvalidConfig",
                                "variant name '" + variant.name + "' is not unique");
                }
                for (const auto& [name, value] : v.at("values").items()) {
                    variant.value_overrides[name] = value.get<std::string>();
                }
                if (v.contains("injected")) {
                    for (const auto& name : v["injected"]) {
                        variant.injected.push_back(name.get<std::string>());
                    }
                }
                config.variants.push_back(std::move(variant));
            }
            std::sort(config.variants.begin(), config.variants.end(),
                      [](const VariantConfig& a, const VariantConfig& b) { return a.name < b.name; });
        }
        if (doc.contains("analysis")) {
            require_keys(doc["analysis"], {"exclude_fields"}, "analysis block");
            if (doc["analysis"].contains("exclude_fields")) {
                for (const auto& name : doc["analysis"]["exclude_fields"]) {
                    config.exclude_fields.push_back(name.get<std::string>());
                }
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, "InvalidConfig",
                    "experiment config " + path.string() + " is structurally invalid: " +
                        e.what());
    }
    return config;
}

namespace {

ExperimentReport run_pipeline(const ExperimentConfig& config) {
    const PromptTemplate tmpl = PromptTemplate::parse_file(config.template_path);
    const std::string template_hash = sha256_hex(tmpl.serialize());
    const ReferenceVector reference = make_reference(tmpl, config.reference_token);

    const PromptVector base_x = resolve_values(tmpl, config.base_values, {});
    std::vector<PromptVector> variant_xs;
    variant_xs.reserve(config.variants.size());
    for (const auto& variant : config.variants) {
        variant_xs.push_back(resolve_values(tmpl, config.base_values, variant.value_overrides));
    }

    auto matcher = std::make_shared<CompositeMatcher>(tmpl, reference);
    matcher->add_candidates(base_x);
    for (const auto& x : variant_xs) matcher->add_candidates(x);

    std::shared_ptr<const Oracle> oracle = build_oracle(config.oracle, matcher);
    const std::string oracle_identity = oracle->identity();
    std::shared_ptr<CallCache> cache;
    if (config.cache_path) {
        cache = std::make_shared<CallCache>(*config.cache_path);
        oracle = std::make_shared<CachedOracle>(cache, oracle);
    }

    ExperimentReport out;
    out.experiment_kind = std::string(kind_name(config.kind));
    out.config_hash = config.config_hash;
    out.oracle_identity = oracle_identity;
    out.template_hash = template_hash;
    out.reference_token = config.reference_token;
    out.spec = config.spec;
    if (config.cache_path) out.cache_file = config.cache_path->string();

    const std::vector<InfoClass> classes = field_info_classes(tmpl);

    auto run_variant = [&](const std::string& name, const PromptVector& x,
                           const std::vector<std::string>& injected) {
        VariantResult result;
        result.name = name;
        result.rendered_prompt = render(tmpl, x);
        result.prompt_cache_key =
            CallCache::make_key(result.rendered_prompt, config.spec, oracle_identity);
        result.distribution = oracle->evaluate(result.rendered_prompt, config.spec);
        result.distribution.validate(config.spec);

        ValueFunctionBinding binding(tmpl, x, reference, oracle, config.spec);
        result.attribution = config.method == "exact" ? exact_shapley(binding, config.estimator)
                                                      : mc_shapley(binding, config.estimator);
        result.normalized = normalize_abs(result.attribution, tmpl);
        result.noise = token_noise_share(result.normalized, classes);
        result.report = build_report(tmpl, result.attribution, result.normalized, result.noise,
                                     oracle_identity, template_hash);
        for (auto& field : result.report.fields) {
            if (std::find(injected.begin(), injected.end(), field.name) != injected.end()) {
                field.injected = true;
            }
        }
        return result;
    };

    out.base = run_variant("base", base_x, {});
    for (std::size_t i = 0; i < config.variants.size(); ++i) {
        const VariantConfig& variant = config.variants[i];
        out.variants.push_back(run_variant(variant.name, variant_xs[i], variant.injected));

        const std::set<std::string> injected(variant.injected.begin(), variant.injected.end());
        const std::set<std::string> excluded(config.exclude_fields.begin(),
                                             config.exclude_fields.end());
        NamedComparison comparison;
        comparison.name = variant.name;
        comparison.body = compare_attributions(out.base.attribution, out.base.normalized,
                                               out.variants.back().attribution,
                                               out.variants.back().normalized, injected, excluded);
        out.comparisons.push_back(std::move(comparison));
    }
    return out;
}

}  // namespace

ExperimentReport run_attribution_experiment(const ExperimentConfig& config) {
    return run_pipeline(config);
}

ExperimentReport run_framing_experiment(const ExperimentConfig& config) {
    if (config.variants.empty()) {
        throw Error(ErrorKind::Config, "InvalidConfig",
                    "a framing experiment needs at least one framed variant");
    }
    bool any_injected = false;
    for (const auto& v : config.variants) any_injected = any_injected || !v.injected.empty();
    if (!any_injected) {
        throw Error(ErrorKind::Config, "InvalidConfig",
                    "a framing experiment must declare the injected field(s) of its variants");
    }
    return run_pipeline(config);
}

ExperimentReport run_perturbation_comparison(const ExperimentConfig& config) {
    if (config.variants.empty()) {
        throw Error(ErrorKind::Config, "InvalidConfig",
                    "a perturbation comparison needs at least one perturbed variant");
    }
    return run_pipeline(config);
}

namespace {

json variant_to_json(const VariantResult& v) {
    json doc;
    doc["name"] = v.name;
    doc["rendered_prompt"] = v.rendered_prompt;
    doc["prompt_cache_key"] = v.prompt_cache_key;
    doc["distribution"] = v.distribution.probs;
    doc["report"] = json::parse(report_to_json_text(v.report));
    return doc;
}

}  // namespace

std::string experiment_report_to_json_text(const ExperimentReport& report) {
    json doc;
    doc["schema_version"] = "1";
    doc["experiment"] = report.experiment_kind;
    doc["config_hash"] = report.config_hash;
    doc["oracle"] = report.oracle_identity;
    doc["template_hash"] = report.template_hash;
    doc["reference_token"] = report.reference_token;
    doc["labels"] = report.spec.labels;
    doc["target"] = report.spec.target;
    if (report.cache_file) doc["cache_file"] = *report.cache_file;
    doc["variants"] = json::array();
    doc["variants"].push_back(variant_to_json(report.base));
    for (const auto& v : report.variants) doc["variants"].push_back(variant_to_json(v));
    doc["comparisons"] = json::array();
    for (const auto& nc : report.comparisons) {
        doc["comparisons"].push_back(
            json::parse(comparisons_to_json_text({nc}))["comparisons"][0]);
    }
    return doc.dump(2) + "\n";
}

void validate_experiment_report_json_text(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, "InvalidReport",
                    std::string("experiment report is not valid JSON: ") + e.what());
    }
    require_keys(doc,
                 {"schema_version", "experiment", "config_hash", "oracle", "template_hash",
                  "reference_token", "labels", "target", "cache_file", "variants", "comparisons"},
                 "experiment report");
    for (const auto& key :
         {"schema_version", "experiment", "config_hash", "oracle", "template_hash", "target"}) {
        if (!doc.contains(key) || !doc[key].is_string()) {
            throw Error(ErrorKind::Config, "InvalidReport",
                        std::string("experiment report needs string '") + key + "'");
        }
    }
    if (doc["schema_version"].get<std::string>() != "1") {
        throw Error(ErrorKind::Config, "InvalidReport", "unsupported schema_version");
    }
    if (!doc.contains("variants") || !doc["variants"].is_array() || doc["variants"].empty()) {
        throw Error(ErrorKind::Config, "InvalidReport", "experiment report has no variants");
    }
    for (const auto& v : doc["variants"]) {
        require_keys(v, {"name", "rendered_prompt", "prompt_cache_key", "distribution", "report"},
                     "experiment variant");
        for (const auto& key : {"name", "rendered_prompt", "prompt_cache_key"}) {
            if (!v.contains(key) || !v[key].is_string()) {
                throw Error(ErrorKind::Config, "InvalidReport",
                            std::string("variant needs string '") + key + "'");
            }
        }
        report_from_json_text(v.at("report").dump());  // full strict check
    }
}

}  // namespace promptshap
