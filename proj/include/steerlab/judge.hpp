#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/serialize.hpp"

namespace steerlab {

// Rubric scores for one generation, each graded 0-2 by the judge model, plus
// their harmonic mean.  `scoring_error` marks items whose responses never
// parsed; their scores are meaningless and excluded from aggregates.
struct JudgeScore {
    int concept_score = 0;
    int instruction = 0;
    int fluency = 0;
    double harmonic = 0.0;
    bool scoring_error = false;
    std::string raw;  // final raw response content, kept for audit
};

// 3 / (1/s1 + 1/s2 + 1/s3); defined as 0 when any score is 0.  Scores must
// lie in [0, 2].
double harmonic_mean(double s1, double s2, double s3);

struct JudgeConfig {
    std::string endpoint;  // full URL of a chat-completions-compatible route
    std::string model = "gpt-4.1-mini";
    std::string api_key_env = "STEERLAB_JUDGE_KEY";
    size_t max_attempts = 3;        // total tries per item, exponential backoff
    double backoff_initial_ms = 250.0;
    std::string audit_path;         // when set, raw exchanges land here (JSONL)
};

// Minimal HTTP POST abstraction so tests can inject a mock endpoint.
// status 0 means the request never completed (network failure).
struct HttpResponse {
    int status = 0;
    std::string body;
};
using HttpPost = std::function<HttpResponse(const std::string& url, const std::string& body,
                                            const std::string& bearer_token)>;

// POSTs {model, messages, temperature: 0} per generation, asking for three
// 0-2 integers (concept, instruction, fluency), and parses them from
// choices[0].message.content.  Transient failures (network, 5xx, 429,
// unparseable content) retry with exponential backoff up to max_attempts;
// items that never parse come back flagged scoring_error.  HTTP 401/403 or a
// missing key aborts with auth_error.
std::vector<JudgeScore> judge_generations(const JudgeConfig& cfg,
                                          const std::vector<std::string>& generations,
                                          const std::string& rubric,
                                          const HttpPost& post = {});

// The built-in transport (plain HTTP); exposed for the CLI.
HttpResponse http_post_json(const std::string& url, const std::string& body,
                            const std::string& bearer_token);

// Extracts the first three integers from judge response content; returns
// false if fewer than three are present or any is outside [0, 2].
bool parse_judge_scores(const std::string& content, int& concept_score, int& instruction,
                        int& fluency);

}  // namespace steerlab
