#include "promptshap/commands.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "promptshap/analysis.hpp"
#include "promptshap/cache.hpp"
#include "promptshap/errors.hpp"
#include "promptshap/experiment.hpp"
#include "promptshap/hash.hpp"
#include "promptshap/report.hpp"
#include "promptshap/shapley.hpp"

namespace promptshap {

namespace {

[[noreturn]] void usage_error(const std::string& message) {
    throw Error(ErrorKind::Config, "UsageError", message);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorKind::Io, "FileOpenFailed", "cannot write " + path.string());
    }
    out << content;
    if (!out) {
        throw Error(ErrorKind::Io, "FileWriteFailed", "failed writing " + path.string());
    }
}

/// Run metadata that must not perturb byte-identical reports: a sidecar
/// next to --out, never inside the report.
void write_meta_sidecar(const std::filesystem::path& out_path,
                        std::chrono::steady_clock::time_point started) {
    nlohmann::json meta;
    meta["written_at"] = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
    meta["wall_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - started)
                          .count();
    write_file(out_path.string() + ".meta.json", meta.dump(2) + "\n");
}

std::string read_file(const std::filesystem::path& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, "FileOpenFailed", "cannot open " + what + " " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

int run_guarded(std::ostream& err, const std::function<int()>& body) {
    try {
        return body();
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

struct PlotPaths {
    std::filesystem::path main;
    std::filesystem::path grouped;
};

PlotPaths plot_paths(const std::filesystem::path& out) {
    PlotPaths paths;
    paths.main = out;
    paths.grouped = out;
    paths.grouped.replace_extension();
    paths.grouped += ".grouped.tsv";
    return paths;
}

void emit_report(const Report& report, const AnalyzeOptions& options, std::ostream& out,
                 std::ostream& err) {
    std::string payload;
    if (options.format == "json") {
        payload = report_to_json_text(report);
    } else if (options.format == "csv") {
        payload = report_to_csv(report);
    } else if (options.format == "plot") {
        payload = plot_data(report);
    } else {
        usage_error("--format must be json, csv or plot, got '" + options.format + "'");
    }
    if (options.out_path) {
        write_file(*options.out_path, payload);
        if (options.format == "plot") {
            write_file(plot_paths(*options.out_path).grouped, plot_data_grouped(report));
        }
        err << "wrote " << options.out_path->string() << " (" << report.fields.size()
            << " fields, efficiency residual " << format_double(report.efficiency_residual)
            << ")\n";
    } else {
        out << payload;
    }
}

int analyze_from_config(const AnalyzeOptions& options, std::ostream& out, std::ostream& err) {
    const auto started = std::chrono::steady_clock::now();
    ExperimentConfig config = ExperimentConfig::load(*options.config_path);
    ExperimentReport report;
    switch (config.kind) {
        case ExperimentConfig::Kind::Attribution:
            report = run_attribution_experiment(config);
            break;
        case ExperimentConfig::Kind::Framing:
            report = run_framing_experiment(config);
            break;
        case ExperimentConfig::Kind::Perturbation:
            report = run_perturbation_comparison(config);
            break;
    }
    const std::string payload = experiment_report_to_json_text(report);
    if (options.out_path) {
        write_file(*options.out_path, payload);
        write_meta_sidecar(*options.out_path, started);
        err << "wrote " << options.out_path->string() << " (" << 1 + report.variants.size()
            << " variants)\n";
    } else {
        out << payload;
    }
    return 0;
}

}  // namespace

int cmd_analyze(const AnalyzeOptions& options, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&]() -> int {
        if (options.config_path) {
            return analyze_from_config(options, out, err);
        }
        if (!options.template_path) usage_error("--template is required");
        if (!options.values_path) usage_error("--values is required");
        if (!options.model) usage_error("--model is required");
        if (!options.target_label) usage_error("--target-label is required");
        if (options.method != "mc" && options.method != "exact") {
            usage_error("--method must be mc or exact, got '" + options.method + "'");
        }
        const auto started = std::chrono::steady_clock::now();

        const PromptTemplate tmpl = PromptTemplate::parse_file(*options.template_path);
        const std::string template_hash = sha256_hex(tmpl.serialize());
        const PromptVector x =
            PromptVector::from_names(tmpl, load_values_file(*options.values_path));
        const ReferenceVector r = make_reference(tmpl, options.reference_token);

        ChoiceSpec spec;
        spec.labels = options.labels;
        spec.target = *options.target_label;
        spec.validate();

        const OracleSpec oracle_spec = parse_model_flag(*options.model);
        std::shared_ptr<const CompositeMatcher> matcher;
        if (oracle_spec.kind != OracleSpec::Kind::Remote) {
            auto m = std::make_shared<CompositeMatcher>(tmpl, r);
            m->add_candidates(x);
            matcher = std::move(m);
        }
        std::shared_ptr<const Oracle> oracle = build_oracle(oracle_spec, matcher);
        const std::string oracle_identity = oracle->identity();
        if (options.cache_path) {
            oracle = std::make_shared<CachedOracle>(std::make_shared<CallCache>(*options.cache_path),
                                                    oracle);
        }

        EstimatorConfig estimator;
        estimator.iterations = options.iterations;
        estimator.seed = options.seed;
        estimator.parallelism = options.parallelism;
        estimator.exact_limit = options.exact_limit;
        estimator.track_std_error = options.std_error;
        estimator.validate();

        ValueFunctionBinding binding(tmpl, x, r, oracle, spec);
        const AttributionVector attribution = options.method == "exact"
                                                  ? exact_shapley(binding, estimator)
                                                  : mc_shapley(binding, estimator);
        const NormalizedAttribution normalized = normalize_abs(attribution, tmpl);
        const NoiseBreakdown noise = token_noise_share(normalized, field_info_classes(tmpl));
        const Report report = build_report(tmpl, attribution, normalized, noise, oracle_identity,
                                           template_hash);
        emit_report(report, options, out, err);
        if (options.out_path) write_meta_sidecar(*options.out_path, started);
        return 0;
    });
}

int cmd_exact(AnalyzeOptions options, std::ostream& out, std::ostream& err) {
    options.method = "exact";
    return cmd_analyze(options, out, err);
}

int cmd_compare(const CompareOptions& options, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&]() -> int {
        if (options.config_path) {
            AnalyzeOptions forward;
            forward.config_path = options.config_path;
            forward.out_path = options.out_path;
            return analyze_from_config(forward, out, err);
        }
        if (options.report_paths.size() < 2) {
            usage_error("compare needs two or more report files, or --config");
        }
        std::vector<Report> reports;
        reports.reserve(options.report_paths.size());
        for (const auto& path : options.report_paths) {
            reports.push_back(report_from_json_text(read_file(path, "report")));
        }
        const std::set<std::string> injected(options.injected.begin(), options.injected.end());
        const std::set<std::string> excluded(options.exclude.begin(), options.exclude.end());

        auto to_profile = [](const Report& r) {
            AttributionVector a;
            NormalizedAttribution n;
            for (const auto& f : r.fields) {
                a.phi.push_back(f.phi_signed);
                n.names.push_back(f.name);
                n.weights.push_back(f.weight_normalized);
            }
            a.phi0 = r.phi0;
            a.f_x = r.f_x;
            return std::make_pair(a, n);
        };

        const auto [base_phi, base_norm] = to_profile(reports.front());
        std::vector<NamedComparison> comparisons;
        for (std::size_t i = 1; i < reports.size(); ++i) {
            const auto [phi, norm] = to_profile(reports[i]);
            NamedComparison nc;
            nc.name = options.report_paths[i].string();
            nc.body = compare_attributions(base_phi, base_norm, phi, norm, injected, excluded);
            comparisons.push_back(std::move(nc));
        }
        const std::string payload = comparisons_to_json_text(comparisons);
        if (options.out_path) {
            write_file(*options.out_path, payload);
            err << "wrote " << options.out_path->string() << " (" << comparisons.size()
                << " comparisons)\n";
        } else {
            out << payload;
        }
        return 0;
    });
}

int cmd_probe(const ProbeOptions& options, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&]() -> int {
        if (!options.prompt_path) usage_error("--prompt is required");
        if (!options.model) usage_error("--model is required");
        if (!options.target_label) usage_error("--target-label is required");

        ChoiceSpec spec;
        spec.labels = options.labels;
        spec.target = *options.target_label;
        spec.validate();

        const OracleSpec oracle_spec = parse_model_flag(*options.model);
        std::shared_ptr<const CompositeMatcher> matcher;
        if (oracle_spec.kind != OracleSpec::Kind::Remote) {
            if (!options.template_path || !options.values_path) {
                usage_error("synthetic oracles need --template and --values to bind to");
            }
            const PromptTemplate tmpl = PromptTemplate::parse_file(*options.template_path);
            auto m = std::make_shared<CompositeMatcher>(
                tmpl, make_reference(tmpl, options.reference_token));
            m->add_candidates(
                PromptVector::from_names(tmpl, load_values_file(*options.values_path)));
            matcher = std::move(m);
        }
        std::shared_ptr<const Oracle> oracle = build_oracle(oracle_spec, matcher);
        if (options.cache_path && !options.no_cache) {
            oracle = std::make_shared<CachedOracle>(std::make_shared<CallCache>(*options.cache_path),
                                                    oracle);
        }

        const std::string prompt = read_file(*options.prompt_path, "prompt file");
        const ChoiceDistribution dist = oracle->evaluate(prompt, spec);
        dist.validate(spec);

        nlohmann::json doc;
        doc["prompt_sha256"] = sha256_hex(prompt);
        doc["oracle"] = oracle->identity();
        doc["distribution"] = dist.probs;
        doc["target"] = spec.target;
        doc["target_probability"] = choice_probability(dist, spec);
        const std::string payload = doc.dump(2) + "\n";
        if (options.out_path) {
            write_file(*options.out_path, payload);
            err << "wrote " << options.out_path->string() << "\n";
        } else {
            out << payload;
        }
        return 0;
    });
}

}  // namespace promptshap
