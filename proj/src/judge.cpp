#include "steerlab/judge.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "steerlab/errors.hpp"
#include "steerlab/util.hpp"

namespace steerlab {

double harmonic_mean(double s1, double s2, double s3) {
    for (double s : {s1, s2, s3})
        if (!std::isfinite(s) || s < 0.0 || s > 2.0)
            throw validation_error("harmonic_mean: scores must lie in [0, 2]");
    if (s1 == 0.0 || s2 == 0.0 || s3 == 0.0) return 0.0;
    return 3.0 / (1.0 / s1 + 1.0 / s2 + 1.0 / s3);
}

bool parse_judge_scores(const std::string& content, int& concept_score, int& instruction,
                        int& fluency) {
    int vals[3];
    size_t found = 0;
    for (size_t i = 0; i < content.size() && found < 3; ++i) {
        if (!std::isdigit(static_cast<unsigned char>(content[i]))) continue;
        size_t j = i;
        long v = 0;
        while (j < content.size() && std::isdigit(static_cast<unsigned char>(content[j]))) {
            v = v * 10 + (content[j] - '0');
            if (v > 99) break;
            ++j;
        }
        if (v < 0 || v > 2) return false;
        vals[found++] = static_cast<int>(v);
        i = j;
    }
    if (found != 3) return false;
    concept_score = vals[0];
    instruction = vals[1];
    fluency = vals[2];
    return true;
}

HttpResponse http_post_json(const std::string& url, const std::string& body,
                            const std::string& bearer_token) {
    const size_t scheme = url.find("://");
    if (scheme == std::string::npos)
        throw argument_error("judge endpoint must be a full URL, got: " + url);
    const size_t slash = url.find('/', scheme + 3);
    const std::string base = slash == std::string::npos ? url : url.substr(0, slash);
    const std::string path = slash == std::string::npos ? "/" : url.substr(slash);
    httplib::Client cli(base);
    cli.set_connection_timeout(10, 0);
    cli.set_read_timeout(60, 0);
    httplib::Headers headers = {{"Authorization", "Bearer " + bearer_token}};
    auto res = cli.Post(path, headers, body, "application/json");
    if (!res) return {0, ""};
    return {res->status, res->body};
}

std::vector<JudgeScore> judge_generations(const JudgeConfig& cfg,
                                          const std::vector<std::string>& generations,
                                          const std::string& rubric, const HttpPost& post) {
    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (key == nullptr || *key == '\0')
        throw auth_error("judge API key missing: set $" + cfg.api_key_env);
    if (cfg.endpoint.empty()) throw argument_error("judge endpoint not configured");
    const HttpPost transport = post ? post : HttpPost(http_post_json);
    const size_t attempts = cfg.max_attempts == 0 ? 1 : cfg.max_attempts;

    std::string audit;
    std::vector<JudgeScore> out;
    for (size_t i = 0; i < generations.size(); ++i) {
        const json body = {{"model", cfg.model},
                           {"messages",
                            json::array({{{"role", "user"},
                                          {"content", rubric + "\n\nText to evaluate:\n" +
                                                          generations[i]}}})},
                           {"temperature", 0}};
        const std::string body_text = body.dump();

        JudgeScore score;
        score.scoring_error = true;
        for (size_t attempt = 0; attempt < attempts; ++attempt) {
            if (attempt > 0 && cfg.backoff_initial_ms > 0.0) {
                const double ms = cfg.backoff_initial_ms * std::pow(2.0, attempt - 1.0);
                std::this_thread::sleep_for(
                    std::chrono::milliseconds(static_cast<long long>(ms)));
            }
            const HttpResponse r = transport(cfg.endpoint, body_text, key);
            audit += json{{"item", i}, {"attempt", attempt}, {"status", r.status},
                          {"body", r.body}}
                         .dump();
            audit += '\n';
            if (r.status == 401 || r.status == 403)
                throw auth_error("judge endpoint rejected the key (HTTP " +
                                 std::to_string(r.status) + ")");
            if (r.status != 200) continue;  // network, rate limit, server error: retry
            const json resp = json::parse(r.body, nullptr, /*allow_exceptions=*/false);
            if (resp.is_discarded()) continue;
            std::string content;
            try {
                content = resp.at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const json::exception&) {
                continue;
            }
            score.raw = content;
            int c = 0, ins = 0, f = 0;
            if (!parse_judge_scores(content, c, ins, f)) continue;
            score.concept_score = c;
            score.instruction = ins;
            score.fluency = f;
            score.harmonic = harmonic_mean(c, ins, f);
            score.scoring_error = false;
            break;
        }
        out.push_back(std::move(score));
    }
    if (!cfg.audit_path.empty()) atomic_write_file(cfg.audit_path, audit);
    return out;
}

}  // namespace steerlab
