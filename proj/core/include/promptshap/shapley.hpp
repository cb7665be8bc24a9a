#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "promptshap/oracle.hpp"
#include "promptshap/template.hpp"

namespace promptshap {

enum class AttributionMethod { Exact, MonteCarlo };

std::string_view to_string(AttributionMethod m);

struct EstimatorConfig {
    long long iterations = 3000;  ///< permutation count T (Monte Carlo)
    std::uint64_t seed = 0;
    int parallelism = 1;
    int exact_limit = 12;  ///< max field count for exact mode (2^N oracle calls)
    bool track_std_error = true;

    void validate() const;
};

/// Signed per-field attributions plus the run's bookkeeping. phi[i-1] is
/// field i's value; phi0 = f(r) is the baseline; f_x = f(x). The phis sum
/// to f_x - phi0 (see efficiency_residual).
struct AttributionVector {
    std::vector<double> phi;
    double phi0 = 0.0;
    double f_x = 0.0;
    AttributionMethod method = AttributionMethod::Exact;
    long long iterations = 0;  ///< Monte Carlo only
    std::uint64_t seed = 0;    ///< Monte Carlo only
    long long oracle_calls = 0;
    std::vector<double> std_error;  ///< per field, Monte Carlo only (advisory)

    int field_count() const { return static_cast<int>(phi.size()); }
};

/// Binds the coalition game together: template, the real assignment x, the
/// reference assignment r, the oracle and the choice spec. The payoff of a
/// coalition is the target-probability lift over the all-reference prompt,
/// so the empty coalition is worth exactly zero. f(r) is evaluated once and
/// reused. Thread-safe; oracle calls are counted.
class ValueFunctionBinding {
public:
    ValueFunctionBinding(PromptTemplate tmpl, PromptVector x, ReferenceVector r,
                         std::shared_ptr<const Oracle> oracle, ChoiceSpec spec);

    int field_count() const { return template_.field_count(); }

    double reference_probability() const;  ///< f(r), cached after first use
    double text_probability(const std::string& prompt) const;  ///< raw f, counted
    double prompt_probability(const PromptVector& z) const;

    /// v(s) = f(z(x, r, s)) - f(r). Empty coalition returns 0 without an
    /// oracle call.
    double coalition_value(Coalition s) const;

    long long oracle_calls() const { return calls_.load(); }

    const PromptTemplate& prompt_template() const { return template_; }
    const PromptVector& x() const { return x_; }
    const ReferenceVector& reference() const { return r_; }
    const Oracle& oracle() const { return *oracle_; }
    const ChoiceSpec& spec() const { return spec_; }

private:
    PromptTemplate template_;
    PromptVector x_;
    ReferenceVector r_;
    std::shared_ptr<const Oracle> oracle_;
    ChoiceSpec spec_;

    mutable std::once_flag f_r_once_;
    mutable double f_r_ = 0.0;
    mutable std::atomic<long long> calls_{0};
};

/// s!(N-s-1)!/N!: the weight of one coalition of size s among N players.
/// Computed by incremental ratios, stable up to N = 64.
double shapley_weight(int coalition_size, int player_count);

/// Exact attribution by subset enumeration: every one of the 2^N composite
/// prompts is evaluated exactly once, then each field's weighted marginal
/// contributions are accumulated with compensated summation. Requires
/// N <= config.exact_limit.
AttributionVector exact_shapley(const ValueFunctionBinding& binding,
                                const EstimatorConfig& config);

/// Monte Carlo estimate over T random permutations. Each iteration draws
/// its permutation from an independent stream keyed by (seed, iteration),
/// walks it flipping fields from r to x, and records marginal probability
/// differences; the per-iteration offsets cancel, so one f(r) evaluation
/// serves the whole run. Estimates are the running mean of the marginals,
/// folded in iteration order, which makes results bit-identical for a
/// given (seed, T) at any parallelism. Oracle calls: T*N + 1.
AttributionVector mc_shapley(const ValueFunctionBinding& binding, const EstimatorConfig& config);

/// |sum(phi) - (f_x - phi0)|; how much of the lift the attributions miss.
double efficiency_residual(const AttributionVector& a);

}  // namespace promptshap
