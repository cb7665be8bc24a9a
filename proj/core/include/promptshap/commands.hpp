#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace promptshap {

/// Flags shared by analyze/exact. Reports go to the output stream (or
/// --out); diagnostics go to the error stream, never the other way round.
struct AnalyzeOptions {
    std::optional<std::filesystem::path> template_path;
    std::optional<std::filesystem::path> values_path;
    std::string reference_token = "_";
    std::optional<std::string> model;
    std::vector<std::string> labels{"A", "B"};
    std::optional<std::string> target_label;
    long long iterations = 3000;
    std::uint64_t seed = 0;
    std::string method = "mc";  ///< "mc" | "exact"
    int parallelism = 1;
    int exact_limit = 12;
    bool std_error = true;
    std::optional<std::filesystem::path> cache_path;
    std::optional<std::filesystem::path> out_path;
    std::string format = "json";  ///< json | csv | plot
    std::optional<std::filesystem::path> config_path;  ///< alternative to the flags above
};

struct CompareOptions {
    std::vector<std::filesystem::path> report_paths;  ///< two or more reports, or
    std::optional<std::filesystem::path> config_path;  ///< one experiment config
    std::vector<std::string> injected;
    std::vector<std::string> exclude;
    std::optional<std::filesystem::path> out_path;
};

struct ProbeOptions {
    std::optional<std::filesystem::path> prompt_path;
    std::optional<std::string> model;
    std::vector<std::string> labels{"A", "B"};
    std::optional<std::string> target_label;
    /// Synthetic oracles bind to a template + values.
    std::optional<std::filesystem::path> template_path;
    std::optional<std::filesystem::path> values_path;
    std::string reference_token = "_";
    std::optional<std::filesystem::path> cache_path;
    bool no_cache = false;
    std::optional<std::filesystem::path> out_path;
};

/// Run one attribution and emit the report. Exit 0 on success; 2/3/4/5 for
/// config, oracle, estimation and I/O failures.
int cmd_analyze(const AnalyzeOptions& options, std::ostream& out, std::ostream& err);

/// cmd_analyze with the method pinned to exact.
int cmd_exact(AnalyzeOptions options, std::ostream& out, std::ostream& err);

/// Compare attribution reports (or run a variant experiment config) and
/// emit the comparison document.
int cmd_compare(const CompareOptions& options, std::ostream& out, std::ostream& err);

/// Evaluate one prompt file and print its choice distribution.
int cmd_probe(const ProbeOptions& options, std::ostream& out, std::ostream& err);

}  // namespace promptshap
