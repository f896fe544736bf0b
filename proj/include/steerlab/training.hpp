#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/measurement.hpp"
#include "steerlab/serialize.hpp"

namespace steerlab {

// Weights of the SPLIT objective
//   loss = lambda_p * L_p + lambda_n * L_n + gamma * relu(theta - (L_n - L_p))
// i.e. a utility term that keeps both completions likely plus a hinge-style
// margin that pushes the preference gap L_n - L_p up to at least theta.
struct SplitConfig {
    double lambda_p = 1.0;
    double lambda_n = 1.0;
    double gamma = 1.0;
    double theta = 2.0;

    // All weights must be >= 0 and at least one of lambda_p, gamma positive
    // (otherwise nothing ties the loss to the positive completion).
    void validate() const;  // throws config_error
};

double split_loss(double lp, double ln, const SplitConfig& cfg);

// (d loss / d L_p, d loss / d L_n).  The hinge kink at gap == theta takes
// the flat branch (relu'(0) = 0), so the margin term contributes only while
// gap < theta strictly.
std::pair<double, double> split_loss_grad(double lp, double ln, const SplitConfig& cfg);

// Cross-entropy on the concept-positive completion alone; equals split_loss
// with lambda_p=1, lambda_n=0, gamma=0.
double sft_loss(double lp);

// reps is registered for surface parity with the published baselines but is
// an external method; selecting it raises not_implemented_error.
enum class Objective { sft, split, reps };

std::string objective_name(Objective o);
Objective objective_from_name(const std::string& name);

struct TrainConfig {
    Objective objective = Objective::split;
    InterventionForm form = InterventionForm::vector;
    size_t lora_rank = 4;  // used only when form == lora
    SiteId site;
    double lr = 0.05;
    size_t steps = 200;
    size_t batch = 8;
    uint64_t seed = 0;
    // Steering scale applied while computing the training loss; sweeps later
    // rescale the learned tensors freely.
    double m_train = 1.0;
    // Shared with measurement: when set, losses are per-answer-token.
    bool length_normalize = false;
    // Plain SGD by default; set for Adam-style moments at the same lr.
    bool adam = false;
    SplitConfig split;

    void validate() const;  // throws config_error
};

struct TrainStepRecord {
    size_t step = 0;
    double loss = 0.0;       // batch mean of the full objective
    double util_term = 0.0;  // batch mean of lambda_p*L_p + lambda_n*L_n
    double pref_term = 0.0;  // batch mean of gamma*relu(theta - gap)
    double gap_mean = 0.0;   // batch mean of L_n - L_p
};

struct TrainResult {
    Intervention iv;
    std::vector<TrainStepRecord> log;  // one record per step
    double final_loss = 0.0;
    size_t steps_run = 0;
};

// The zero-initialized intervention of cfg.form shaped for cfg.site on this
// model.  LoRA's A gets a small random init from cfg.seed while B stays
// zero, so every fresh intervention is an exact no-op at any steering scale.
Intervention init_intervention(const LanguageModel& model, const TrainConfig& cfg);

// Gradient descent on the intervention tensors only, against the frozen
// base model (verified by checksum).  Deterministic given cfg.seed.  A
// non-finite batch loss aborts with training_error carrying the serialized
// last state whose loss was still finite.
TrainResult train_intervention(const LanguageModel& model, const TrainConfig& cfg,
                               const std::vector<PolarityExample>& train_set);

// Train-free baseline: mean(pos_acts) - mean(neg_acts) as a steering vector.
// Inputs are row vectors of equal width.
Intervention diffmean_vector(const std::vector<Tensor>& pos_acts,
                             const std::vector<Tensor>& neg_acts);

// Activation at `site` on the last token of each answer, the conventional
// capture position for diffmean_vector; returns (positive, negative) sets
// aligned with `examples`.
std::pair<std::vector<Tensor>, std::vector<Tensor>> collect_answer_activations(
    const LanguageModel& model, const SiteId& site, const std::vector<PolarityExample>& examples);

// Intervention checkpoint: form, target site, raw tensors, and free-form
// training metadata.  Round trips are bit-exact.
struct InterventionCheckpoint {
    Intervention iv;
    SiteId site;
    json meta = json::object();
};

json intervention_to_json(const InterventionCheckpoint& ckpt);
InterventionCheckpoint intervention_from_json(const json& j);
void save_intervention(const InterventionCheckpoint& ckpt, const std::string& path);
InterventionCheckpoint load_intervention(const std::string& path);

// Training log round trip: one JSON object per line, one line per step.
void save_train_log(const std::vector<TrainStepRecord>& log, const std::string& path);
std::vector<TrainStepRecord> load_train_log(const std::string& path);

}  // namespace steerlab
