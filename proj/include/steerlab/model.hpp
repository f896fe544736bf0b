#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/intervention.hpp"
#include "steerlab/tape.hpp"
#include "steerlab/tensor.hpp"

namespace steerlab {

struct ModelConfig {
    size_t vocab_size = 128;
    size_t d_model = 64;
    size_t n_layers = 4;
    size_t n_heads = 2;
    size_t d_mlp = 256;
    size_t ctx_len = 64;
    uint64_t seed = 0;

    void validate() const;  // throws config_error
    bool operator==(const ModelConfig&) const = default;
};

// Parameters of one pre-norm transformer block.  Attention projections are
// stored [d_out, d_in] and applied as x W^T + b.
struct LayerParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w_up, b_up;      // [d_mlp, d_model]
    Tensor w_down, b_down;  // [d_model, d_mlp] - the mlp_down site
};

// Decoder-only autoregressive model with learned positional embeddings,
// pre-norm blocks, and a tied unembedding (logits = x tok_emb^T), so the
// token read and write bases coincide.  Intervention sites:
//   {layer, mlp_down}: the MLP down-projection affine map of that block
//   {layer, residual}: the residual stream immediately after that block
struct LanguageModel {
    ModelConfig config;
    Tensor tok_emb;         // [vocab, d_model]
    Tensor pos_emb;         // [ctx_len, d_model]
    std::vector<LayerParams> layers;
    Tensor lnf_g, lnf_b;    // final layer norm
    bool frozen = false;

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;
    size_t param_count() const;
    uint64_t checksum() const;  // FNV-1a over raw parameter bytes, order-stable

    void validate_site(const SiteId& site) const;  // throws site_error
};

// How a hook realizes the dynamic update at an affine site:
//   activation - compute the base map, then add the activation impact
//                m1*dW*h + m2*db (the trainable path; supports positions)
//   weight     - materialize (W+m1*dW, b+m2*db) and run the modified map
//                (the literal weight-space path; whole-sequence only)
// Both are the same update expressed on the two sides of the distributive
// law; keeping both lets tests compare them.
enum class HookMode { activation, weight };

// An intervention attached to a site for the duration of one forward pass.
// `positions`, when non-empty, restricts application to those token indices
// (default: every position).
struct Hook {
    SiteId site;
    const Intervention* iv = nullptr;
    SteerScale scale;
    HookMode mode = HookMode::activation;
    std::vector<size_t> positions;
};

// Result of a taped forward pass.  `hook_params` holds, per hook, the tape
// leaves of that hook's intervention tensors (in the tensor order of the
// form: dW,db | B,A | db) so a trainer can read their gradients after
// backward(); `base_params` likewise mirrors named_params() order when base
// gradients were requested.  Var handles are only meaningful together with
// `tape`.
struct ForwardRun {
    GradTape tape;
    Var logits;                               // [T, vocab]
    std::vector<std::vector<Var>> hook_params;
    std::vector<Var> base_params;
    std::optional<Tensor> captured;           // see ForwardOptions::capture
};

struct ForwardOptions {
    bool base_needs_grad = false;   // track gradients of model parameters
    bool hooks_need_grad = false;   // track gradients of intervention tensors
    // When set, records the activation entering the given site (input h for
    // mlp_down, post-block stream for residual) as a [T, dim] tensor.
    std::optional<SiteId> capture;
};

LanguageModel init_model(const ModelConfig& config);

// Full taped forward pass; the primitive under all public entry points.
ForwardRun run_forward(const LanguageModel& model, const std::vector<size_t>& tokens,
                       const std::vector<Hook>& hooks, const ForwardOptions& opts = {});

// Causal logits [T, vocab] for a token sequence under optional hooks.
Tensor forward_logits(const LanguageModel& model, const std::vector<size_t>& tokens,
                      const std::vector<Hook>& hooks = {});

// Teacher-forced NLL of `answer` given `query`: -sum_t log P(a_t | q, a_<t>),
// summed over answer tokens only; divided by answer length iff
// length_normalize.
double sequence_nll(const LanguageModel& model, const std::vector<size_t>& query,
                    const std::vector<size_t>& answer, const std::vector<Hook>& hooks = {},
                    bool length_normalize = false);

// The hidden vector entering `site` at one token position (row vector).
Tensor capture_activation(const LanguageModel& model, const std::vector<size_t>& tokens,
                          const SiteId& site, size_t position);

struct BaseTrainResult {
    LanguageModel model;       // frozen
    double final_loss = 0.0;   // mean per-token NLL over the last epoch's batches
    size_t steps_run = 0;
};

// Next-token pretraining on a corpus of token sequences with Adam.
// Deterministic given the seed; the returned model is marked frozen.
BaseTrainResult train_base(const LanguageModel& model,
                           const std::vector<std::vector<size_t>>& corpus, size_t steps,
                           double lr, size_t batch, uint64_t seed);

// Bit-exact checkpoint round trip.
void save_model(const LanguageModel& model, const std::string& path);
LanguageModel load_model(const std::string& path);

}  // namespace steerlab
