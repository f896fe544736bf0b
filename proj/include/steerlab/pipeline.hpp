#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/curvefit.hpp"
#include "steerlab/data.hpp"
#include "steerlab/judge.hpp"
#include "steerlab/serialize.hpp"
#include "steerlab/training.hpp"

namespace steerlab {

// Effective run configuration: the full default key set overlaid with a flat
// dotted-key JSON file and then with --set overrides (override wins).
// Unknown keys and type mismatches are config errors, so typos fail loudly.
class RunConfig {
  public:
    static RunConfig defaults();
    // `overrides` entries are "key=value"; values parse as JSON scalars where
    // possible and fall back to strings.
    static RunConfig load(const std::string& path, const std::vector<std::string>& overrides);
    static RunConfig from_json(const json& file_values,
                               const std::vector<std::string>& overrides);

    double num(const std::string& key) const;
    uint64_t u64(const std::string& key) const;
    size_t sz(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::string str(const std::string& key) const;

    // FNV-1a over the canonical dump of the effective config, as 16 hex
    // chars; embedded in every artifact this run writes.
    std::string config_hash() const;
    // <stage>.seed when set, otherwise derived deterministically from the
    // master `seed` and the stage name.
    uint64_t stage_seed(const std::string& stage) const;
    std::filesystem::path workdir() const;
    const json& effective() const { return values_; }

  private:
    json values_ = json::object();
};

// Canonical artifact locations inside the workdir.
struct ArtifactPaths {
    std::filesystem::path workdir;

    explicit ArtifactPaths(std::filesystem::path wd) : workdir(std::move(wd)) {}
    std::filesystem::path corpus() const { return workdir / "corpus.jsonl"; }
    std::filesystem::path train_pairs() const { return workdir / "train_pairs.jsonl"; }
    std::filesystem::path eval_pairs() const { return workdir / "eval_pairs.jsonl"; }
    std::filesystem::path manifest() const { return workdir / "dataset_manifest.json"; }
    std::filesystem::path base_model() const { return workdir / "base_model.json"; }
    std::filesystem::path base_meta() const { return workdir / "base_model.meta.json"; }
    std::filesystem::path intervention(const std::string& obj, const std::string& form) const {
        return workdir / ("intervention-" + obj + "-" + form + ".json");
    }
    std::filesystem::path train_log(const std::string& obj, const std::string& form) const {
        return workdir / ("train-log-" + obj + "-" + form + ".jsonl");
    }
    std::filesystem::path sweep_csv(const std::string& obj, const std::string& form) const {
        return workdir / ("sweep-" + obj + "-" + form + ".csv");
    }
    std::filesystem::path sweep_raw(const std::string& obj, const std::string& form) const {
        return workdir / ("sweep-" + obj + "-" + form + ".raw.jsonl");
    }
    std::filesystem::path fit_json(const std::string& obj, const std::string& form,
                                   const std::string& which) const {
        return workdir / ("fit-" + obj + "-" + form + "-" + which + ".json");
    }
    std::filesystem::path transfer_json(const std::string& obj, const std::string& form) const {
        return workdir / ("transfer-" + obj + "-" + form + ".json");
    }
    std::filesystem::path judge_scores(const std::string& obj, const std::string& form) const {
        return workdir / ("judge-" + obj + "-" + form + ".jsonl");
    }
    std::filesystem::path judge_audit(const std::string& obj, const std::string& form) const {
        return workdir / ("judge-audit-" + obj + "-" + form + ".jsonl");
    }
    std::filesystem::path report_md() const { return workdir / "report.md"; }
    std::filesystem::path report_csv() const { return workdir / "report.csv"; }
};

// Pipeline stages behind the CLI subcommands.  Each writes its artifacts
// atomically and returns a one-line summary.  Missing upstream artifacts
// raise missing_artifact_error; bad configuration raises config_error or
// validation_error.
std::string run_gen_data(const RunConfig& rc);
std::string run_train_base(const RunConfig& rc);
std::string run_steer_train(const RunConfig& rc);
std::string run_sweep(const RunConfig& rc);
std::string run_fit(const RunConfig& rc);
std::string run_transfer(const RunConfig& rc);
std::string run_report(const RunConfig& rc);

// The positive-branch steering scale where the utility curve has dropped by
// `drop` from its m=0 value (linear interpolation between grid points), with
// the preference value there: (m_at_drop, pref_at_drop).  Empty when the
// curve never drops that far.
std::optional<std::pair<double, double>> pref_at_util_drop(const SweepCurve& curve, double drop);

// Greedy continuation of `query` under the given hooks, stopping at
// max_new_tokens or the context limit.  Returns only the new tokens.
std::vector<size_t> greedy_generate(const LanguageModel& model, const std::vector<size_t>& query,
                                    const std::vector<Hook>& hooks, size_t max_new_tokens);

}  // namespace steerlab
