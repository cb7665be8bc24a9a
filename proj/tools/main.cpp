#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "promptshap/commands.hpp"

namespace {

// All value flags stay optional at the parser level; the command layer
// validates and maps gaps to the config exit code with a proper diagnostic.
void add_analyze_flags(CLI::App* cmd, promptshap::AnalyzeOptions& options, bool with_method) {
    cmd->add_option("--template", options.template_path, "Template file (double-brace markers)");
    cmd->add_option("--values", options.values_path, "JSON file: field name -> value");
    cmd->add_option("--reference-token", options.reference_token,
                    "Reference value for absent fields (default \"_\")");
    cmd->add_option("--model", options.model,
                    "Oracle: synthetic:additive:FILE | synthetic:logistic:SEED | "
                    "synthetic:tabular:SEED | remote:URL:MODEL");
    cmd->add_option("--labels", options.labels, "Choice labels (default A B)")->delimiter(',');
    cmd->add_option("--target-label", options.target_label, "Label whose probability is f");
    cmd->add_option("--iterations", options.iterations, "Monte Carlo permutations (default 3000)");
    cmd->add_option("--seed", options.seed, "Estimator seed (default 0)");
    if (with_method) {
        cmd->add_option("--method", options.method, "mc | exact (default mc)");
    }
    cmd->add_option("--parallelism", options.parallelism, "Concurrent oracle lanes (default 1)");
    cmd->add_option("--exact-limit", options.exact_limit,
                    "Max field count for exact mode (default 12)");
    cmd->add_flag("!--no-std-error", options.std_error, "Drop per-field standard errors");
    cmd->add_option("--cache", options.cache_path, "Oracle call cache file");
    cmd->add_option("--out", options.out_path, "Write the report here instead of stdout");
    cmd->add_option("--format", options.format, "json | csv | plot (default json)");
    cmd->add_option("--config", options.config_path,
                    "Run a full experiment config instead of single-run flags");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "promptshap: Shapley-value attribution of templated prompt fields against a "
        "choice-probability oracle"};
    app.require_subcommand(1);

    promptshap::AnalyzeOptions analyze_options;
    CLI::App* analyze = app.add_subcommand(
        "analyze", "Attribute every template field's contribution to the choice probability");
    add_analyze_flags(analyze, analyze_options, true);

    promptshap::AnalyzeOptions exact_options;
    CLI::App* exact =
        app.add_subcommand("exact", "analyze with the method pinned to exact enumeration");
    add_analyze_flags(exact, exact_options, false);

    promptshap::CompareOptions compare_options;
    CLI::App* compare =
        app.add_subcommand("compare", "Compare attribution reports or run a variant experiment");
    compare->add_option("reports", compare_options.report_paths,
                        "Report files; the first is the baseline");
    compare->add_option("--config", compare_options.config_path,
                        "Experiment config with variants");
    compare->add_option("--injected", compare_options.injected,
                        "Fields allowed to exist on one side only")
        ->delimiter(',');
    compare->add_option("--exclude", compare_options.exclude,
                        "Fields dropped from the cosine similarity")
        ->delimiter(',');
    compare->add_option("--out", compare_options.out_path, "Write the comparison here");

    promptshap::ProbeOptions probe_options;
    CLI::App* probe = app.add_subcommand("probe", "Print the choice distribution for one prompt");
    probe->add_option("--prompt", probe_options.prompt_path, "Prompt text file");
    probe->add_option("--model", probe_options.model, "Oracle spec (see analyze)");
    probe->add_option("--labels", probe_options.labels, "Choice labels (default A B)")
        ->delimiter(',');
    probe->add_option("--target-label", probe_options.target_label, "Target label");
    probe->add_option("--template", probe_options.template_path,
                      "Template file (synthetic oracles only)");
    probe->add_option("--values", probe_options.values_path,
                      "Values file (synthetic oracles only)");
    probe->add_option("--reference-token", probe_options.reference_token, "Reference value");
    probe->add_option("--cache", probe_options.cache_path, "Oracle call cache file");
    probe->add_flag("--no-cache", probe_options.no_cache, "Bypass the cache for this probe");
    probe->add_option("--out", probe_options.out_path, "Write the distribution here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);  // --help
        }
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    if (analyze->parsed()) {
        return promptshap::cmd_analyze(analyze_options, std::cout, std::cerr);
    }
    if (exact->parsed()) {
        return promptshap::cmd_exact(exact_options, std::cout, std::cerr);
    }
    if (compare->parsed()) {
        return promptshap::cmd_compare(compare_options, std::cout, std::cerr);
    }
    if (probe->parsed()) {
        return promptshap::cmd_probe(probe_options, std::cout, std::cerr);
    }
    return 2;
}
