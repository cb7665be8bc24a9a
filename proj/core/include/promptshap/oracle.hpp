#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "promptshap/template.hpp"

namespace promptshap {

/// The fixed, finite choice set a prompt asks the model to pick from, plus
/// the label whose probability defines f. Pinned by configuration; it never
/// changes with the coalition.
struct ChoiceSpec {
    std::vector<std::string> labels;
    std::string target;

    void validate() const;  ///< labels non-empty and unique, target among them
};

/// A probability distribution over a ChoiceSpec's labels. Sums to 1 within
/// 1e-9; every probability finite and in [0,1].
struct ChoiceDistribution {
    std::map<std::string, double> probs;

    void validate(const ChoiceSpec& spec) const;
};

/// f's scalar output: the probability of the spec's target label.
double choice_probability(const ChoiceDistribution& dist, const ChoiceSpec& spec);

/// A probability oracle: any function from prompt text to a distribution
/// over a fixed choice set. Implementations must be safe to call
/// concurrently and deterministic for identical inputs (synthetic kinds).
class Oracle {
public:
    virtual ~Oracle() = default;

    virtual ChoiceDistribution evaluate(std::string_view prompt, const ChoiceSpec& spec) const = 0;

    /// Stable identity string; feeds cache keys, so anything that changes
    /// the function must change the identity.
    virtual std::string identity() const = 0;
};

/// Recovers which fields of a composite prompt carry a non-reference value.
/// Candidate values per field are registered up front (one assignment per
/// prompt variant plus the reference), and the text is matched against the
/// template structure with those candidates. A field counts as present when
/// the matched value differs from the reference value.
class CompositeMatcher {
public:
    struct Match {
        std::uint64_t mask = 0;            ///< bit i-1 set = field i present
        std::vector<std::string> values;   ///< matched value per field, by index
    };

    CompositeMatcher(PromptTemplate tmpl, ReferenceVector reference);

    /// Register the values of one prompt variant as match candidates.
    void add_candidates(const PromptVector& assignment);

    /// Match the text against the template; throws MalformedPrompt when it
    /// cannot be derived from the registered candidates.
    Match match(std::string_view text) const;

    /// Presence bitmask only.
    std::uint64_t presence_mask(std::string_view text) const { return match(text).mask; }

    const PromptTemplate& prompt_template() const { return template_; }
    const ReferenceVector& reference() const { return reference_; }
    int field_count() const { return template_.field_count(); }

    /// Digest of template + reference + candidates; part of synthetic
    /// oracle identities.
    std::string digest() const;

private:
    PromptTemplate template_;
    ReferenceVector reference_;
    std::vector<std::vector<std::string>> candidates_;  // per field; reference value last
};

/// Synthetic model that is linear in field presence:
/// P(target) = base + sum(weight_i * present_i). Its exact Shapley values
/// are the weights, which makes it the workhorse analytic test oracle.
class SyntheticAdditiveOracle : public Oracle {
public:
    /// `weights` are ordered by field index. Throws WeightRangeViolation
    /// unless every attainable probability lies in [0,1].
    SyntheticAdditiveOracle(std::shared_ptr<const CompositeMatcher> matcher, double base,
                            std::vector<double> weights);

    ChoiceDistribution evaluate(std::string_view prompt, const ChoiceSpec& spec) const override;
    std::string identity() const override;

    double base() const { return base_; }
    const std::vector<double>& weights() const { return weights_; }

private:
    std::shared_ptr<const CompositeMatcher> matcher_;
    double base_;
    std::vector<double> weights_;
};

/// Seeded logistic model over field presence; smooth and mildly nonlinear.
class SyntheticLogisticOracle : public Oracle {
public:
    SyntheticLogisticOracle(std::shared_ptr<const CompositeMatcher> matcher, std::uint64_t seed);

    ChoiceDistribution evaluate(std::string_view prompt, const ChoiceSpec& spec) const override;
    std::string identity() const override;

private:
    std::shared_ptr<const CompositeMatcher> matcher_;
    std::uint64_t seed_;
    double bias_;
    std::vector<double> weights_;
};

/// Seeded random map from the matched field values to a probability.
/// Within one attribution run the composites vary only by presence, so this
/// is a random coalition table; across prompt variants it also reacts to
/// value substitutions. Deliberately structureless; stresses estimators
/// with hard nonlinear value functions.
class SyntheticTabularOracle : public Oracle {
public:
    SyntheticTabularOracle(std::shared_ptr<const CompositeMatcher> matcher, std::uint64_t seed);

    ChoiceDistribution evaluate(std::string_view prompt, const ChoiceSpec& spec) const override;
    std::string identity() const override;

private:
    std::shared_ptr<const CompositeMatcher> matcher_;
    std::uint64_t seed_;
};

/// Tabular oracle with an explicit probability per presence mask; lets
/// tests pin down arbitrary games (symmetric players, composite sums, ...).
class ExplicitTabularOracle : public Oracle {
public:
    ExplicitTabularOracle(std::shared_ptr<const CompositeMatcher> matcher,
                          std::vector<double> prob_by_mask);

    ChoiceDistribution evaluate(std::string_view prompt, const ChoiceSpec& spec) const override;
    std::string identity() const override;

    double value_for_mask(std::uint64_t mask) const;

private:
    std::shared_ptr<const CompositeMatcher> matcher_;
    std::vector<double> prob_by_mask_;
};

/// Instrumentation wrapper: counts calls and distinct prompts seen.
class CountingOracle : public Oracle {
public:
    explicit CountingOracle(std::shared_ptr<const Oracle> inner);

    ChoiceDistribution evaluate(std::string_view prompt, const ChoiceSpec& spec) const override;
    std::string identity() const override { return inner_->identity(); }

    long long call_count() const;
    long long distinct_prompt_count() const;

private:
    std::shared_ptr<const Oracle> inner_;
    mutable std::mutex mutex_;
    mutable long long calls_ = 0;
    mutable std::set<std::string, std::less<>> distinct_;
};

/// Builds a distribution that puts `target_probability` on the target and
/// spreads the rest uniformly over the remaining labels.
ChoiceDistribution distribution_for_target(double target_probability, const ChoiceSpec& spec);

}  // namespace promptshap
