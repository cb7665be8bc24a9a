#pragma once

#include <map>
#include <memory>
#include <string>

#include "promptshap/oracle.hpp"

namespace promptshap {

struct RemoteOptions {
    std::string base_url;  ///< e.g. "http://127.0.0.1:8037/v1"
    std::string model;
    std::string api_key_env = "PROMPTSHAP_API_KEY";  ///< token read from env, never a flag
    int top_logprobs = 20;
    int max_retries = 3;
    int retry_backoff_ms = 250;  ///< doubles after each failed attempt
    int timeout_sec = 30;
    int sample_count = 8;  ///< completions per prompt on the logprobs-absent fallback
    int max_concurrent = 4;
    /// Optional token ids per label; forwarded as logit_bias when present.
    std::map<std::string, int> label_token_ids;
};

/// Talks to an OpenAI-compatible completions endpoint. Sends temperature-0
/// single-token requests, reads top log-probabilities for the first
/// generated position, scores each label by its first token and
/// renormalizes over the choice set. Endpoints without logprobs are handled
/// by repeated constrained sampling with empirical frequencies.
class RemoteOracle : public Oracle {
public:
    explicit RemoteOracle(RemoteOptions options);
    ~RemoteOracle() override;

    ChoiceDistribution evaluate(std::string_view prompt, const ChoiceSpec& spec) const override;
    std::string identity() const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace promptshap
