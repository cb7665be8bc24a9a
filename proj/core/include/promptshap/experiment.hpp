#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "promptshap/analysis.hpp"
#include "promptshap/cache.hpp"
#include "promptshap/oracle.hpp"
#include "promptshap/remote_oracle.hpp"
#include "promptshap/report.hpp"
#include "promptshap/shapley.hpp"

namespace promptshap {

/// Which oracle to run against; parsed from --model flags or the "oracle"
/// block of an experiment config.
struct OracleSpec {
    enum class Kind { SyntheticAdditive, SyntheticLogistic, SyntheticTabular, Remote };
    Kind kind = Kind::SyntheticAdditive;

    // synthetic-additive
    double base = 0.0;
    std::map<std::string, double> weights_by_name;  ///< unnamed fields weigh 0

    // seeded synthetic kinds
    std::uint64_t seed = 0;

    // remote
    RemoteOptions remote;
};

/// Parse a --model flag: synthetic:additive:FILE | synthetic:logistic:SEED |
/// synthetic:tabular:SEED | remote:URL:MODEL (URL may contain colons; the
/// model name is everything after the last one).
OracleSpec parse_model_flag(const std::string& flag);

/// Synthetic oracles need a matcher; remote ones ignore it.
std::shared_ptr<const Oracle> build_oracle(const OracleSpec& spec,
                                           std::shared_ptr<const CompositeMatcher> matcher);

struct VariantConfig {
    std::string name;
    std::map<std::string, std::string> value_overrides;
    std::vector<std::string> injected;  ///< fields reported separately, excluded from cosine
};

struct ExperimentConfig {
    enum class Kind { Attribution, Framing, Perturbation };
    Kind kind = Kind::Attribution;

    std::filesystem::path template_path;
    std::map<std::string, std::string> base_values;
    std::string reference_token = "_";
    ChoiceSpec spec;
    OracleSpec oracle;
    EstimatorConfig estimator;
    std::string method = "mc";  ///< "mc" | "exact"
    std::optional<std::filesystem::path> cache_path;
    std::vector<VariantConfig> variants;
    std::vector<std::string> exclude_fields;  ///< extra cosine exclusions

    std::string config_hash;  ///< sha256 of the canonicalized config JSON

    /// Load and validate a JSON config; relative paths resolve against the
    /// config file's directory. Unknown keys are rejected.
    static ExperimentConfig load(const std::filesystem::path& path);
};

struct VariantResult {
    std::string name;
    std::string rendered_prompt;
    std::string prompt_cache_key;  ///< key of the headline distribution call
    ChoiceDistribution distribution;
    AttributionVector attribution;
    NormalizedAttribution normalized;
    NoiseBreakdown noise;
    Report report;
};

/// Everything one experiment produced: a result block per variant (none
/// silently missing) and a comparison of every variant against the base.
struct ExperimentReport {
    std::string experiment_kind;
    std::string config_hash;
    std::string oracle_identity;
    std::string template_hash;
    std::string reference_token;
    ChoiceSpec spec;
    std::optional<std::string> cache_file;
    VariantResult base;
    std::vector<VariantResult> variants;       ///< ordered by variant name
    std::vector<NamedComparison> comparisons;  ///< same order, vs base
};

/// Attribute the base prompt: distribution, signed and normalized
/// attributions, noise breakdown.
ExperimentReport run_attribution_experiment(const ExperimentConfig& config);

/// Base plus framed variant(s); the comparison carries the injected field's
/// signed phi, the choice-probability shift and the cosine similarity with
/// injected fields excluded.
ExperimentReport run_framing_experiment(const ExperimentConfig& config);

/// Base plus reworded variants given as value overrides; the headline is
/// the change in target probability.
ExperimentReport run_perturbation_comparison(const ExperimentConfig& config);

std::string experiment_report_to_json_text(const ExperimentReport& report);

/// Strict schema check for emitted experiment reports; throws on violations.
void validate_experiment_report_json_text(std::string_view text);

}  // namespace promptshap
