#include "promptshap/shapley.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <numeric>
#include <thread>

#include "promptshap/errors.hpp"
#include "promptshap/rng.hpp"

namespace promptshap {

namespace {

/// Kahan compensated accumulator; keeps long sums accurate to a few ulps.
struct Accumulator {
    double sum = 0.0;
    double carry = 0.0;

    void add(double v) {
        const double y = v - carry;
        const double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
};

void run_partitioned(long long count, int parallelism, const std::function<void(long long, long long)>& body) {
    if (parallelism <= 1 || count <= 1) {
        body(0, count);
        return;
    }
    const int workers = static_cast<int>(std::min<long long>(parallelism, count));
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    std::mutex error_mutex;
    std::exception_ptr first_error;
    const long long chunk = (count + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const long long lo = w * chunk;
        const long long hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back([&, lo, hi] {
            try {
                body(lo, hi);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

std::string_view to_string(AttributionMethod m) {
    return m == AttributionMethod::Exact ? "exact" : "monte-carlo";
}

void EstimatorConfig::validate() const {
    if (iterations < 1) {
        throw Error(ErrorKind::Config, "InvalidConfig", "iterations must be >= 1");
    }
    if (parallelism < 1) {
        throw Error(ErrorKind::Config, "InvalidConfig", "parallelism must be >= 1");
    }
    if (exact_limit < 1 || exact_limit > Coalition::capacity) {
        throw Error(ErrorKind::Config, "InvalidConfig",
                    "exact_limit must be in 1.." + std::to_string(Coalition::capacity));
    }
}

ValueFunctionBinding::ValueFunctionBinding(PromptTemplate tmpl, PromptVector x, ReferenceVector r,
                                           std::shared_ptr<const Oracle> oracle, ChoiceSpec spec)
    : template_(std::move(tmpl)),
      x_(std::move(x)),
      r_(std::move(r)),
      oracle_(std::move(oracle)),
      spec_(std::move(spec)) {
    spec_.validate();
    if (x_.field_count() != template_.field_count() || r_.field_count() != template_.field_count()) {
        throw Error(ErrorKind::Config, "FieldSetMismatch",
                    "x and r must cover exactly the template's fields");
    }
    if (template_.field_count() > Coalition::capacity) {
        throw Error(ErrorKind::Estimation, "TooManyFields",
                    "attribution supports at most " + std::to_string(Coalition::capacity) +
                        " fields");
    }
}

double ValueFunctionBinding::text_probability(const std::string& prompt) const {
    calls_.fetch_add(1, std::memory_order_relaxed);
    const ChoiceDistribution dist = oracle_->evaluate(prompt, spec_);
    dist.validate(spec_);
    const double p = choice_probability(dist, spec_);
    if (!std::isfinite(p)) {
        throw Error(ErrorKind::Oracle, "NonFiniteProbability",
                    "oracle returned a non-finite probability");
    }
    return p;
}

double ValueFunctionBinding::prompt_probability(const PromptVector& z) const {
    return text_probability(render(template_, z));
}

double ValueFunctionBinding::reference_probability() const {
    std::call_once(f_r_once_, [this] { f_r_ = prompt_probability(r_); });
    return f_r_;
}

double ValueFunctionBinding::coalition_value(Coalition s) const {
    const double f_r = reference_probability();
    if (s.is_empty()) return 0.0;  // z(x, r, {}) = r, and f(r) - f(r) = 0
    try {
        return prompt_probability(compose(x_, r_, s)) - f_r;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Oracle) {
            throw Error(e.kind(), e.code(),
                        std::string(e.what()) + " (coalition bits=" + std::to_string(s.bits()) +
                            ")");
        }
        throw;
    }
}

double shapley_weight(int coalition_size, int player_count) {
    if (player_count < 1 || coalition_size < 0 || coalition_size > player_count - 1) {
        throw Error(ErrorKind::Estimation, "DomainError",
                    "need 0 <= coalition_size <= player_count-1 and player_count >= 1");
    }
    // w(s) = s!(N-s-1)!/N!; w(0) = 1/N and w(s) = w(s-1) * s / (N-s).
    double w = 1.0 / static_cast<double>(player_count);
    for (int s = 1; s <= coalition_size; ++s) {
        w *= static_cast<double>(s) / static_cast<double>(player_count - s);
    }
    return w;
}

AttributionVector exact_shapley(const ValueFunctionBinding& binding,
                                const EstimatorConfig& config) {
    config.validate();
    const int n = binding.field_count();
    if (n > config.exact_limit) {
        throw Error(ErrorKind::Estimation, "TooManyFields",
                    "exact attribution over " + std::to_string(n) + " fields needs 2^" +
                        std::to_string(n) + " oracle calls; limit is " +
                        std::to_string(config.exact_limit) +
                        " (raise exact_limit or use the Monte Carlo estimator)");
    }
    const long long calls_before = binding.oracle_calls();
    const std::size_t table_size = std::size_t{1} << n;

    // One f evaluation per composite prompt, mask 0 being the reference.
    std::vector<double> f_of_mask(table_size);
    f_of_mask[0] = binding.reference_probability();
    run_partitioned(static_cast<long long>(table_size) - 1, config.parallelism,
                    [&](long long lo, long long hi) {
                        for (long long m = lo; m < hi; ++m) {
                            const auto mask = static_cast<std::uint64_t>(m + 1);
                            try {
                                f_of_mask[mask] = binding.prompt_probability(
                                    compose(binding.x(), binding.reference(),
                                            Coalition::from_bits(mask)));
                            } catch (const Error& e) {
                                if (e.kind() == ErrorKind::Oracle) {
                                    throw Error(e.kind(), e.code(),
                                                std::string(e.what()) +
                                                    " (coalition bits=" + std::to_string(mask) +
                                                    ")");
                                }
                                throw;
                            }
                        }
                    });

    std::vector<double> weight_by_size(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) weight_by_size[static_cast<std::size_t>(s)] = shapley_weight(s, n);

    AttributionVector result;
    result.method = AttributionMethod::Exact;
    result.phi.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::uint64_t bit = std::uint64_t{1} << i;
        Accumulator acc;
        for (std::uint64_t mask = 0; mask < table_size; ++mask) {
            if (mask & bit) continue;
            acc.add(weight_by_size[static_cast<std::size_t>(std::popcount(mask))] *
                    (f_of_mask[mask | bit] - f_of_mask[mask]));
        }
        result.phi[static_cast<std::size_t>(i)] = acc.sum;
    }
    result.phi0 = f_of_mask[0];
    result.f_x = f_of_mask[table_size - 1];
    result.oracle_calls = binding.oracle_calls() - calls_before;
    return result;
}

AttributionVector mc_shapley(const ValueFunctionBinding& binding, const EstimatorConfig& config) {
    config.validate();
    const int n = binding.field_count();
    const long long iterations = config.iterations;
    const long long calls_before = binding.oracle_calls();
    const double f_r = binding.reference_probability();

    const auto width = static_cast<std::size_t>(n);
    std::vector<Accumulator> sums(width);
    std::vector<Accumulator> sq_sums(config.track_std_error ? width : 0);
    double f_x = 0.0;

    // Iterations are computed in parallel blocks but folded strictly in
    // iteration order, so the estimate is bit-identical at any parallelism.
    const long long block = std::min<long long>(iterations, 4096);
    std::vector<double> marginals(static_cast<std::size_t>(block) * width);
    std::vector<double> finals(static_cast<std::size_t>(block));

    for (long long start = 0; start < iterations; start += block) {
        const long long len = std::min(block, iterations - start);
        run_partitioned(len, config.parallelism, [&](long long lo, long long hi) {
            std::vector<int> order(width);
            std::vector<std::string> composite;
            for (long long k = lo; k < hi; ++k) {
                const long long t = start + k + 1;  // 1-based iteration index
                auto engine = stream_engine(config.seed, static_cast<std::uint64_t>(t));
                std::iota(order.begin(), order.end(), 1);
                fisher_yates(std::span<int>(order), engine);

                composite = binding.reference().values();
                double previous = f_r;
                double* row = &marginals[static_cast<std::size_t>(k) * width];
                for (int field : order) {
                    composite[static_cast<std::size_t>(field - 1)] = binding.x().value(field);
                    double current;
                    try {
                        current = binding.text_probability(
                            render_values(binding.prompt_template(), composite));
                    } catch (const Error& e) {
                        if (e.kind() == ErrorKind::Oracle) {
                            throw Error(e.kind(), e.code(),
                                        std::string(e.what()) + " (iteration " +
                                            std::to_string(t) + ", flipping field " +
                                            std::to_string(field) + ")");
                        }
                        throw;
                    }
                    row[static_cast<std::size_t>(field - 1)] = current - previous;
                    previous = current;
                }
                finals[static_cast<std::size_t>(k)] = previous;  // full coalition = f(x)
            }
        });
        if (start == 0) f_x = finals[0];
        for (long long k = 0; k < len; ++k) {
            const double* row = &marginals[static_cast<std::size_t>(k) * width];
            for (std::size_t i = 0; i < width; ++i) {
                sums[i].add(row[i]);
                if (config.track_std_error) sq_sums[i].add(row[i] * row[i]);
            }
        }
    }

    AttributionVector result;
    result.method = AttributionMethod::MonteCarlo;
    result.iterations = iterations;
    result.seed = config.seed;
    result.phi.resize(width);
    const auto count = static_cast<double>(iterations);
    for (std::size_t i = 0; i < width; ++i) {
        result.phi[i] = sums[i].sum / count;
    }
    if (config.track_std_error && iterations > 1) {
        result.std_error.resize(width);
        for (std::size_t i = 0; i < width; ++i) {
            const double mean = result.phi[i];
            const double variance =
                std::max(0.0, (sq_sums[i].sum - count * mean * mean) / (count - 1.0));
            result.std_error[i] = std::sqrt(variance / count);
        }
    }
    result.phi0 = f_r;
    result.f_x = f_x;
    result.oracle_calls = binding.oracle_calls() - calls_before;
    return result;
}

double efficiency_residual(const AttributionVector& a) {
    Accumulator acc;
    for (double p : a.phi) acc.add(p);
    return std::abs(acc.sum - (a.f_x - a.phi0));
}

}  // namespace promptshap
