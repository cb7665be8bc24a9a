#include "promptshap/oracle.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "promptshap/errors.hpp"
#include "promptshap/hash.hpp"
#include "promptshap/rng.hpp"

namespace promptshap {

void ChoiceSpec::validate() const {
    if (labels.empty()) {
        throw Error(ErrorKind::Config, "InvalidChoiceSpec", "choice set is empty");
    }
    std::set<std::string> seen;
    for (const auto& l : labels) {
        if (!seen.insert(l).second) {
            throw Error(ErrorKind::Config, "InvalidChoiceSpec", "duplicate label '" + l + "'");
        }
    }
    if (!seen.count(target)) {
        throw Error(ErrorKind::Config, "InvalidChoiceSpec",
                    "target '" + target + "' is not one of the labels");
    }
}

void ChoiceDistribution::validate(const ChoiceSpec& spec) const {
    double sum = 0.0;
    for (const auto& label : spec.labels) {
        auto it = probs.find(label);
        if (it == probs.end()) {
            throw Error(ErrorKind::Oracle, "IncompleteDistribution",
                        "no probability for label '" + label + "'");
        }
        const double p = it->second;
        if (!std::isfinite(p)) {
            throw Error(ErrorKind::Oracle, "NonFiniteProbability",
                        "probability for '" + label + "' is not finite");
        }
        if (p < -1e-12 || p > 1.0 + 1e-12) {
            throw Error(ErrorKind::Oracle, "InvalidDistribution",
                        "probability for '" + label + "' outside [0,1]");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw Error(ErrorKind::Oracle, "InvalidDistribution",
                    "probabilities sum to " + std::to_string(sum) + ", expected 1");
    }
}

double choice_probability(const ChoiceDistribution& dist, const ChoiceSpec& spec) {
    auto it = dist.probs.find(spec.target);
    if (it == dist.probs.end()) {
        throw Error(ErrorKind::Oracle, "IncompleteDistribution",
                    "no probability for target '" + spec.target + "'");
    }
    return it->second;
}

ChoiceDistribution distribution_for_target(double target_probability, const ChoiceSpec& spec) {
    if (!std::isfinite(target_probability)) {
        throw Error(ErrorKind::Oracle, "NonFiniteProbability",
                    "synthetic oracle produced a non-finite probability");
    }
    ChoiceDistribution dist;
    const std::size_t others = spec.labels.size() - 1;
    for (const auto& label : spec.labels) {
        if (label == spec.target) {
            dist.probs[label] = target_probability;
        } else {
            dist.probs[label] = (1.0 - target_probability) / static_cast<double>(others);
        }
    }
    return dist;
}

// --- CompositeMatcher -------------------------------------------------------

CompositeMatcher::CompositeMatcher(PromptTemplate tmpl, ReferenceVector reference)
    : template_(std::move(tmpl)), reference_(std::move(reference)) {
    if (reference_.field_count() != template_.field_count()) {
        throw Error(ErrorKind::Config, "FieldSetMismatch",
                    "reference vector does not cover the template's fields");
    }
    if (template_.field_count() > Coalition::capacity) {
        throw Error(ErrorKind::Estimation, "TooManyFields",
                    "presence masks support at most " + std::to_string(Coalition::capacity) +
                        " fields");
    }
    candidates_.resize(static_cast<std::size_t>(template_.field_count()));
    for (int i = 1; i <= template_.field_count(); ++i) {
        candidates_[static_cast<std::size_t>(i - 1)].push_back(reference_.value(i));
    }
}

void CompositeMatcher::add_candidates(const PromptVector& assignment) {
    if (assignment.field_count() != template_.field_count()) {
        throw Error(ErrorKind::Config, "FieldSetMismatch",
                    "candidate assignment does not cover the template's fields");
    }
    for (int i = 1; i <= template_.field_count(); ++i) {
        auto& cands = candidates_[static_cast<std::size_t>(i - 1)];
        const std::string& v = assignment.value(i);
        // Keep the reference value last so non-reference parses are preferred.
        if (std::find(cands.begin(), cands.end(), v) == cands.end()) {
            cands.insert(cands.end() - 1, v);
        }
    }
}

CompositeMatcher::Match CompositeMatcher::match(std::string_view text) const {
    const auto& segments = template_.segments();
    // Backtracking match over segments with memoized dead states. States are
    // (segment, byte position); the candidate lists keep branching tiny.
    std::unordered_set<std::uint64_t> dead;
    Match result;
    result.values.resize(candidates_.size());

    struct Frame {
        std::size_t seg;
        std::size_t pos;
        std::size_t next_candidate;  // for field segments
    };
    std::vector<Frame> stack;
    stack.push_back({0, 0, 0});

    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.seg == segments.size()) {
            if (f.pos == text.size()) return result;
            stack.pop_back();
            continue;
        }
        const auto key = (static_cast<std::uint64_t>(f.seg) << 40) | f.pos;
        if (dead.count(key)) {
            stack.pop_back();
            continue;
        }
        const TemplateSegment& seg = segments[f.seg];
        if (seg.kind == TemplateSegment::Kind::Literal) {
            dead.insert(key);  // one continuation; re-entry means the tail failed
            if (text.compare(f.pos, seg.text.size(), seg.text) == 0) {
                stack.push_back({f.seg + 1, f.pos + seg.text.size(), 0});
            } else {
                stack.pop_back();
            }
            continue;
        }
        const auto field_idx = static_cast<std::size_t>(seg.field.index - 1);
        const auto& cands = candidates_[field_idx];
        const std::string& ref = reference_.value(seg.field.index);
        bool advanced = false;
        while (f.next_candidate < cands.size()) {
            const std::string& cand = cands[f.next_candidate++];
            if (text.compare(f.pos, cand.size(), cand) == 0) {
                if (cand != ref) {
                    result.mask |= std::uint64_t{1} << field_idx;
                } else {
                    result.mask &= ~(std::uint64_t{1} << field_idx);
                }
                result.values[field_idx] = cand;
                stack.push_back({f.seg + 1, f.pos + cand.size(), 0});
                advanced = true;
                break;
            }
        }
        if (!advanced) {
            dead.insert(key);
            result.mask &= ~(std::uint64_t{1} << field_idx);
            stack.pop_back();
        }
    }
    throw Error(ErrorKind::Oracle, "MalformedPrompt",
                "prompt text cannot be derived from the bound template and candidate values");
}

std::string CompositeMatcher::digest() const {
    nlohmann::json doc;
    doc["template"] = template_.serialize();
    doc["reference"] = reference_.values();
    doc["candidates"] = candidates_;
    return sha256_hex(doc.dump());
}

// --- SyntheticAdditiveOracle ------------------------------------------------

SyntheticAdditiveOracle::SyntheticAdditiveOracle(std::shared_ptr<const CompositeMatcher> matcher,
                                                 double base, std::vector<double> weights)
    : matcher_(std::move(matcher)), base_(base), weights_(std::move(weights)) {
    if (static_cast<int>(weights_.size()) != matcher_->field_count()) {
        throw Error(ErrorKind::Config, "FieldSetMismatch",
                    "weight count does not match the template's field count");
    }
    double lo = base_;
    double hi = base_;
    for (double w : weights_) {
        if (!std::isfinite(w)) {
            throw Error(ErrorKind::Config, "WeightRangeViolation", "weights must be finite");
        }
        if (w < 0) lo += w;
        if (w > 0) hi += w;
    }
    if (lo < 0.0 || hi > 1.0) {
        throw Error(ErrorKind::Config, "WeightRangeViolation",
                    "attainable probabilities span [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "], which leaves [0,1]");
    }
}

ChoiceDistribution SyntheticAdditiveOracle::evaluate(std::string_view prompt,
                                                     const ChoiceSpec& spec) const {
    spec.validate();
    const std::uint64_t mask = matcher_->presence_mask(prompt);
    // Sum in field-index order, adding 0 for absent fields: identical
    // rounding paths across masks, so a zero-weight field never moves f.
    double p = base_;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        p += ((mask >> i) & 1u) ? weights_[i] : 0.0;
    }
    return distribution_for_target(p, spec);
}

std::string SyntheticAdditiveOracle::identity() const {
    nlohmann::json doc;
    doc["base"] = base_;
    doc["weights"] = weights_;
    return "synthetic-additive:" + sha256_hex(matcher_->digest() + doc.dump()).substr(0, 16);
}

// --- SyntheticLogisticOracle --------------------------------------------------

SyntheticLogisticOracle::SyntheticLogisticOracle(std::shared_ptr<const CompositeMatcher> matcher,
                                                 std::uint64_t seed)
    : matcher_(std::move(matcher)), seed_(seed) {
    auto engine = stream_engine(seed_, 0);
    bias_ = 2.0 * unit_from_bits(engine()) - 1.0;
    weights_.reserve(static_cast<std::size_t>(matcher_->field_count()));
    for (int i = 0; i < matcher_->field_count(); ++i) {
        weights_.push_back(4.0 * unit_from_bits(engine()) - 2.0);
    }
}

ChoiceDistribution SyntheticLogisticOracle::evaluate(std::string_view prompt,
                                                     const ChoiceSpec& spec) const {
    spec.validate();
    const std::uint64_t mask = matcher_->presence_mask(prompt);
    double z = bias_;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        z += ((mask >> i) & 1u) ? weights_[i] : 0.0;
    }
    const double p = 1.0 / (1.0 + std::exp(-z));
    return distribution_for_target(p, spec);
}

std::string SyntheticLogisticOracle::identity() const {
    return "synthetic-logistic:seed=" + std::to_string(seed_) + ":" +
           matcher_->digest().substr(0, 16);
}

// --- SyntheticTabularOracle ---------------------------------------------------

namespace {

std::uint64_t fnv1a64(std::string_view s, std::uint64_t h) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

SyntheticTabularOracle::SyntheticTabularOracle(std::shared_ptr<const CompositeMatcher> matcher,
                                               std::uint64_t seed)
    : matcher_(std::move(matcher)), seed_(seed) {}

ChoiceDistribution SyntheticTabularOracle::evaluate(std::string_view prompt,
                                                    const ChoiceSpec& spec) const {
    spec.validate();
    const CompositeMatcher::Match m = matcher_->match(prompt);
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& value : m.values) {
        h = fnv1a64(value, h);
        h = fnv1a64("\x1f", h);
    }
    return distribution_for_target(unit_from_bits(splitmix64(seed_ ^ h)), spec);
}

std::string SyntheticTabularOracle::identity() const {
    return "synthetic-tabular:seed=" + std::to_string(seed_) + ":" +
           matcher_->digest().substr(0, 16);
}

// --- ExplicitTabularOracle ----------------------------------------------------

ExplicitTabularOracle::ExplicitTabularOracle(std::shared_ptr<const CompositeMatcher> matcher,
                                             std::vector<double> prob_by_mask)
    : matcher_(std::move(matcher)), prob_by_mask_(std::move(prob_by_mask)) {
    const auto expected = std::size_t{1} << matcher_->field_count();
    if (prob_by_mask_.size() != expected) {
        throw Error(ErrorKind::Config, "InvalidValueTable",
                    "table needs " + std::to_string(expected) + " entries, got " +
                        std::to_string(prob_by_mask_.size()));
    }
    for (double p : prob_by_mask_) {
        if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
            throw Error(ErrorKind::Config, "InvalidValueTable",
                        "table entries must be probabilities in [0,1]");
        }
    }
}

double ExplicitTabularOracle::value_for_mask(std::uint64_t mask) const {
    return prob_by_mask_.at(mask);
}

ChoiceDistribution ExplicitTabularOracle::evaluate(std::string_view prompt,
                                                   const ChoiceSpec& spec) const {
    spec.validate();
    return distribution_for_target(value_for_mask(matcher_->presence_mask(prompt)), spec);
}

std::string ExplicitTabularOracle::identity() const {
    nlohmann::json doc;
    doc["table"] = prob_by_mask_;
    return "synthetic-table:" + sha256_hex(matcher_->digest() + doc.dump()).substr(0, 16);
}

// --- CountingOracle -----------------------------------------------------------

CountingOracle::CountingOracle(std::shared_ptr<const Oracle> inner) : inner_(std::move(inner)) {}

ChoiceDistribution CountingOracle::evaluate(std::string_view prompt,
                                            const ChoiceSpec& spec) const {
    {
        std::lock_guard lock(mutex_);
        ++calls_;
        distinct_.emplace(prompt);
    }
    return inner_->evaluate(prompt, spec);
}

long long CountingOracle::call_count() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

long long CountingOracle::distinct_prompt_count() const {
    std::lock_guard lock(mutex_);
    return static_cast<long long>(distinct_.size());
}

}  // namespace promptshap
