#include "steerlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "steerlab/errors.hpp"
#include "steerlab/serialize.hpp"
#include "steerlab/util.hpp"

namespace steerlab {

void ModelConfig::validate() const {
    if (vocab_size < 2) throw config_error("vocab_size must be at least 2");
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_mlp == 0 || ctx_len == 0)
        throw config_error("all model dimensions must be positive");
    if (d_model % n_heads != 0) throw config_error("d_model must be divisible by n_heads");
}

namespace {
Tensor randn(Rng& rng, size_t r, size_t c, double std_dev) {
    Tensor t(r, c);
    for (double& v : t.data) v = std_dev * rng.normal();
    return t;
}
}  // namespace

LanguageModel init_model(const ModelConfig& config) {
    config.validate();
    LanguageModel m;
    m.config = config;
    Rng rng(config.seed);
    const double s = 0.02;
    const size_t d = config.d_model;
    m.tok_emb = randn(rng, config.vocab_size, d, s);
    m.pos_emb = randn(rng, config.ctx_len, d, s);
    m.layers.resize(config.n_layers);
    for (auto& L : m.layers) {
        L.ln1_g = Tensor(1, d, 1.0);
        L.ln1_b = Tensor(1, d);
        L.wq = randn(rng, d, d, s);
        L.bq = Tensor(1, d);
        L.wk = randn(rng, d, d, s);
        L.bk = Tensor(1, d);
        L.wv = randn(rng, d, d, s);
        L.bv = Tensor(1, d);
        L.wo = randn(rng, d, d, s);
        L.bo = Tensor(1, d);
        L.ln2_g = Tensor(1, d, 1.0);
        L.ln2_b = Tensor(1, d);
        L.w_up = randn(rng, config.d_mlp, d, s);
        L.b_up = Tensor(1, config.d_mlp);
        L.w_down = randn(rng, d, config.d_mlp, s);
        L.b_down = Tensor(1, d);
    }
    m.lnf_g = Tensor(1, d, 1.0);
    m.lnf_b = Tensor(1, d);
    return m;
}

std::vector<std::pair<std::string, Tensor*>> LanguageModel::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("tok_emb", &tok_emb);
    out.emplace_back("pos_emb", &pos_emb);
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerParams& L = layers[l];
        out.emplace_back(p + "ln1_g", &L.ln1_g);
        out.emplace_back(p + "ln1_b", &L.ln1_b);
        out.emplace_back(p + "wq", &L.wq);
        out.emplace_back(p + "bq", &L.bq);
        out.emplace_back(p + "wk", &L.wk);
        out.emplace_back(p + "bk", &L.bk);
        out.emplace_back(p + "wv", &L.wv);
        out.emplace_back(p + "bv", &L.bv);
        out.emplace_back(p + "wo", &L.wo);
        out.emplace_back(p + "bo", &L.bo);
        out.emplace_back(p + "ln2_g", &L.ln2_g);
        out.emplace_back(p + "ln2_b", &L.ln2_b);
        out.emplace_back(p + "w_up", &L.w_up);
        out.emplace_back(p + "b_up", &L.b_up);
        out.emplace_back(p + "w_down", &L.w_down);
        out.emplace_back(p + "b_down", &L.b_down);
    }
    out.emplace_back("lnf_g", &lnf_g);
    out.emplace_back("lnf_b", &lnf_b);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> LanguageModel::named_params() const {
    auto mut = const_cast<LanguageModel*>(this)->named_params();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [n, t] : mut) out.emplace_back(n, t);
    return out;
}

size_t LanguageModel::param_count() const {
    size_t n = 0;
    for (auto& [name, t] : named_params()) n += t->size();
    return n;
}

uint64_t LanguageModel::checksum() const {
    uint64_t h = 1469598103934665603ull;  // FNV offset basis, chained per tensor
    for (auto& [name, t] : named_params()) {
        h ^= fnv1a64(name);
        h *= 1099511628211ull;
        h ^= fnv1a64(t->data.data(), t->data.size() * sizeof(double));
        h *= 1099511628211ull;
    }
    return h;
}

void LanguageModel::validate_site(const SiteId& site) const {
    if (site.layer >= config.n_layers)
        throw site_error("site layer " + std::to_string(site.layer) + " out of range (model has " +
                         std::to_string(config.n_layers) + " layers)");
}

namespace {

// Tape leaves for one hook's intervention tensors, in canonical order.
struct HookVars {
    std::vector<Var> params;  // dW,db | B,A | db
};

void check_hook(const LanguageModel& model, const Hook& h, size_t T) {
    if (h.iv == nullptr) throw argument_error("hook has no intervention");
    model.validate_site(h.site);
    const size_t d = model.config.d_model;
    const size_t site_d_in = h.site.kind == SiteKind::mlp_down ? model.config.d_mlp : d;
    if (h.site.kind == SiteKind::residual && h.iv->form != InterventionForm::vector)
        throw site_error("residual sites accept only the steering-vector form; " +
                         form_name(h.iv->form) + " needs an affine map");
    if (h.iv->d_out() != d)
        throw dim_error("intervention output width " + std::to_string(h.iv->d_out()) +
                        " does not match site width " + std::to_string(d));
    if (h.iv->form == InterventionForm::lora && h.iv->d_in() != site_d_in)
        throw dim_error("lora input width does not match site");
    if (h.iv->form == InterventionForm::local_weight && h.iv->dW.size() != 0 &&
        h.iv->dW.cols != site_d_in)
        throw dim_error("local_weight input width does not match site");
    for (size_t p : h.positions)
        if (p >= T) throw index_error("hook position out of range");
    if (h.mode == HookMode::weight) {
        if (!h.positions.empty())
            throw argument_error("weight-mode hooks apply to the whole sequence");
        if (h.site.kind == SiteKind::residual)
            throw site_error("weight-mode hooks require an affine site");
    }
}

}  // namespace

ForwardRun run_forward(const LanguageModel& model, const std::vector<size_t>& tokens,
                       const std::vector<Hook>& hooks, const ForwardOptions& opts) {
    const ModelConfig& cfg = model.config;
    const size_t T = tokens.size();
    if (T == 0) throw argument_error("run_forward: empty token sequence");
    if (T > cfg.ctx_len)
        throw argument_error("run_forward: sequence length " + std::to_string(T) +
                             " exceeds context " + std::to_string(cfg.ctx_len));
    for (size_t t : tokens)
        if (t >= cfg.vocab_size) throw index_error("run_forward: token id out of range");
    for (const Hook& h : hooks) check_hook(model, h, T);
    if (opts.capture) model.validate_site(*opts.capture);
    if (opts.hooks_need_grad)
        for (const Hook& h : hooks)
            if (h.mode == HookMode::weight)
                throw argument_error("weight-mode hooks do not expose gradients");

    ForwardRun fr;
    GradTape& tape = fr.tape;
    const bool bg = opts.base_needs_grad;

    // Base parameter leaves (order mirrors named_params()).
    std::vector<Var> base_vars;
    std::map<const Tensor*, Var> leaf_of;
    for (auto& [name, t] : model.named_params()) {
        Var v = tape.leaf(*t, bg);
        base_vars.push_back(v);
        leaf_of[t] = v;
    }
    if (bg) fr.base_params = base_vars;
    auto P = [&](const Tensor& t) { return leaf_of.at(&t); };

    // Intervention tensor leaves, per hook.
    std::vector<HookVars> hv(hooks.size());
    const bool hg = opts.hooks_need_grad;
    for (size_t i = 0; i < hooks.size(); ++i) {
        const Intervention& iv = *hooks[i].iv;
        switch (iv.form) {
            case InterventionForm::local_weight:
                hv[i].params = {tape.leaf(iv.dW, hg), tape.leaf(iv.db, hg)};
                break;
            case InterventionForm::lora:
                hv[i].params = {tape.leaf(iv.B, hg), tape.leaf(iv.A, hg)};
                break;
            case InterventionForm::vector:
                hv[i].params = {tape.leaf(iv.db, hg)};
                break;
        }
        fr.hook_params.push_back(hv[i].params);
    }

    // Adds hook i's activation impact for input `h_in` to `out`.
    // h_in: [T, site_d_in]; the returned Var includes position masking.
    auto impact_of = [&](size_t i, Var h_in) -> Var {
        const Hook& hk = hooks[i];
        const Intervention& iv = *hk.iv;
        Var delta;
        bool have_delta = false;
        auto add_delta = [&](Var d2) {
            delta = have_delta ? tape.add(delta, d2) : d2;
            have_delta = true;
        };
        const bool track = hg;
        if ((iv.form == InterventionForm::local_weight || iv.form == InterventionForm::lora) &&
            (hk.scale.m1 != 0.0 || track)) {
            if (iv.form == InterventionForm::local_weight) {
                if (iv.dW.size() != 0)
                    add_delta(tape.scale(tape.matmul_nt(h_in, hv[i].params[0]), hk.scale.m1));
            } else {
                Var t1 = tape.matmul_nt(h_in, hv[i].params[1]);  // [T, r] = h A^T
                add_delta(tape.scale(tape.matmul_nt(t1, hv[i].params[0]), hk.scale.m1));
            }
        }
        if ((iv.form == InterventionForm::local_weight || iv.form == InterventionForm::vector) &&
            (hk.scale.m2 != 0.0 || track)) {
            const size_t db_idx = iv.form == InterventionForm::local_weight ? 1 : 0;
            Var db_row = tape.scale(hv[i].params[db_idx], hk.scale.m2);
            // broadcast the row to T rows via a ones-column matmul-free path:
            // add_row on a zero matrix of the right shape
            Var zeros = tape.leaf(Tensor(T, iv.d_out()), false);
            add_delta(tape.add_row(zeros, db_row));
        }
        if (!have_delta) return Var{};
        if (!hk.positions.empty()) delta = tape.mask_rows(delta, hk.positions);
        return delta;
    };

    // Token + learned positional embeddings.
    std::vector<size_t> pos_ids(T);
    for (size_t i = 0; i < T; ++i) pos_ids[i] = i;
    Var x = tape.add(tape.rows(P(model.tok_emb), tokens), tape.rows(P(model.pos_emb), pos_ids));

    const size_t H = cfg.n_heads;
    const size_t dh = cfg.d_model / H;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerParams& L = model.layers[l];

        // attention sublayer
        Var h1 = tape.layer_norm(x, P(L.ln1_g), P(L.ln1_b));
        Var Q = tape.add_row(tape.matmul_nt(h1, P(L.wq)), P(L.bq));
        Var K = tape.add_row(tape.matmul_nt(h1, P(L.wk)), P(L.bk));
        Var V = tape.add_row(tape.matmul_nt(h1, P(L.wv)), P(L.bv));
        std::vector<Var> heads;
        for (size_t h = 0; h < H; ++h) {
            Var Qh = tape.slice_cols(Q, h * dh, (h + 1) * dh);
            Var Kh = tape.slice_cols(K, h * dh, (h + 1) * dh);
            Var Vh = tape.slice_cols(V, h * dh, (h + 1) * dh);
            Var S = tape.scale(tape.matmul_nt(Qh, Kh), att_scale);
            Var Pm = tape.causal_softmax(S);
            heads.push_back(tape.matmul(Pm, Vh));
        }
        Var attn = tape.add_row(tape.matmul_nt(tape.concat_cols(heads), P(L.wo)), P(L.bo));
        x = tape.add(x, attn);

        // MLP sublayer; the post-ReLU hidden is the mlp_down site input.
        Var h2 = tape.layer_norm(x, P(L.ln2_g), P(L.ln2_b));
        Var u = tape.relu(tape.add_row(tape.matmul_nt(h2, P(L.w_up)), P(L.b_up)));
        if (opts.capture && opts.capture->layer == l && opts.capture->kind == SiteKind::mlp_down)
            fr.captured = tape.val(u);

        // Weight-mode hooks replace the down-projection map itself.
        const Tensor* w_down = &L.w_down;
        const Tensor* b_down = &L.b_down;
        Tensor w_mod, b_mod;
        bool modified = false;
        for (size_t i = 0; i < hooks.size(); ++i) {
            const Hook& hk = hooks[i];
            if (hk.mode != HookMode::weight || hk.site.layer != l ||
                hk.site.kind != SiteKind::mlp_down)
                continue;
            auto [w2, b2] = apply_dynamic_update(*w_down, *b_down, *hk.iv, hk.scale);
            w_mod = std::move(w2);
            b_mod = std::move(b2);
            w_down = &w_mod;
            b_down = &b_mod;
            modified = true;
        }
        Var wd = modified ? tape.leaf(*w_down, false) : P(L.w_down);
        Var bd = modified ? tape.leaf(*b_down, false) : P(L.b_down);
        Var mlp = tape.add_row(tape.matmul_nt(u, wd), bd);

        // Activation-mode hooks on this down-projection.
        for (size_t i = 0; i < hooks.size(); ++i) {
            const Hook& hk = hooks[i];
            if (hk.mode != HookMode::activation || hk.site.layer != l ||
                hk.site.kind != SiteKind::mlp_down)
                continue;
            Var delta = impact_of(i, u);
            if (delta.valid()) mlp = tape.add(mlp, delta);
        }
        x = tape.add(x, mlp);

        // Post-block residual stream: capture first, then inject.
        if (opts.capture && opts.capture->layer == l && opts.capture->kind == SiteKind::residual)
            fr.captured = tape.val(x);
        for (size_t i = 0; i < hooks.size(); ++i) {
            const Hook& hk = hooks[i];
            if (hk.site.layer != l || hk.site.kind != SiteKind::residual) continue;
            Var delta = impact_of(i, Var{});
            if (delta.valid()) x = tape.add(x, delta);
        }
    }

    Var xf = tape.layer_norm(x, P(model.lnf_g), P(model.lnf_b));
    fr.logits = tape.matmul_nt(xf, P(model.tok_emb));  // tied unembedding
    return fr;
}

Tensor forward_logits(const LanguageModel& model, const std::vector<size_t>& tokens,
                      const std::vector<Hook>& hooks) {
    ForwardRun fr = run_forward(model, tokens, hooks);
    return fr.tape.val(fr.logits);
}

double sequence_nll(const LanguageModel& model, const std::vector<size_t>& query,
                    const std::vector<size_t>& answer, const std::vector<Hook>& hooks,
                    bool length_normalize) {
    if (answer.empty()) throw argument_error("sequence_nll: empty answer");
    if (query.empty()) throw argument_error("sequence_nll: empty query");
    std::vector<size_t> tokens = query;
    tokens.insert(tokens.end(), answer.begin(), answer.end());
    ForwardRun fr = run_forward(model, tokens, hooks);
    std::vector<size_t> rows(answer.size()), targets(answer.size());
    for (size_t k = 0; k < answer.size(); ++k) {
        rows[k] = query.size() + k - 1;
        targets[k] = answer[k];
    }
    Var nll = fr.tape.cross_entropy_sum(fr.logits, rows, targets);
    const double total = fr.tape.val(nll)[0];
    return length_normalize ? total / static_cast<double>(answer.size()) : total;
}

Tensor capture_activation(const LanguageModel& model, const std::vector<size_t>& tokens,
                          const SiteId& site, size_t position) {
    if (position >= tokens.size())
        throw index_error("capture_activation: position out of range");
    ForwardOptions opts;
    opts.capture = site;
    ForwardRun fr = run_forward(model, tokens, {}, opts);
    const Tensor& cap = *fr.captured;
    Tensor out(1, cap.cols);
    std::copy_n(&cap.data[position * cap.cols], cap.cols, out.data.begin());
    return out;
}

BaseTrainResult train_base(const LanguageModel& model,
                           const std::vector<std::vector<size_t>>& corpus, size_t steps,
                           double lr, size_t batch, uint64_t seed) {
    if (corpus.empty()) throw training_error("train_base: empty corpus");
    if (batch == 0) throw argument_error("train_base: batch must be positive");
    for (const auto& seq : corpus) {
        if (seq.size() < 2) throw training_error("train_base: sequences need at least 2 tokens");
        if (seq.size() > model.config.ctx_len)
            throw training_error("train_base: corpus sequence exceeds context length");
    }

    BaseTrainResult result;
    result.model = model;
    LanguageModel& m = result.model;
    auto params = m.named_params();

    // Adam state
    std::vector<Tensor> mom1, mom2;
    for (auto& [name, t] : params) {
        mom1.emplace_back(t->rows, t->cols);
        mom2.emplace_back(t->rows, t->cols);
    }
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    Rng rng(seed);
    double last_loss = 0.0;
    for (size_t step = 0; step < steps; ++step) {
        std::vector<Tensor> grad_acc;
        for (auto& [name, t] : params) grad_acc.emplace_back(t->rows, t->cols);
        double loss_sum = 0.0;
        size_t tok_count = 0;
        for (size_t b = 0; b < batch; ++b) {
            const auto& seq = corpus[rng.uniform_int(corpus.size())];
            ForwardOptions opts;
            opts.base_needs_grad = true;
            ForwardRun fr = run_forward(m, seq, {}, opts);
            std::vector<size_t> rows(seq.size() - 1), targets(seq.size() - 1);
            for (size_t k = 0; k + 1 < seq.size(); ++k) {
                rows[k] = k;
                targets[k] = seq[k + 1];
            }
            Var nll = fr.tape.cross_entropy_sum(fr.logits, rows, targets);
            loss_sum += fr.tape.val(nll)[0];
            tok_count += rows.size();
            fr.tape.backward(nll);
            for (size_t p = 0; p < params.size(); ++p)
                add_inplace(grad_acc[p], fr.tape.grad(fr.base_params[p]));
        }
        last_loss = loss_sum / static_cast<double>(tok_count);
        if (!std::isfinite(last_loss))
            throw training_error("train_base: non-finite loss at step " + std::to_string(step));
        const double inv_tok = 1.0 / static_cast<double>(tok_count);
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step + 1));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step + 1));
        for (size_t p = 0; p < params.size(); ++p) {
            Tensor* t = params[p].second;
            for (size_t i = 0; i < t->size(); ++i) {
                const double g = grad_acc[p][i] * inv_tok;
                mom1[p][i] = beta1 * mom1[p][i] + (1.0 - beta1) * g;
                mom2[p][i] = beta2 * mom2[p][i] + (1.0 - beta2) * g * g;
                const double mhat = mom1[p][i] / bc1;
                const double vhat = mom2[p][i] / bc2;
                t->data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
    m.frozen = true;
    result.final_loss = last_loss;
    result.steps_run = steps;
    return result;
}

void save_model(const LanguageModel& model, const std::string& path) {
    json j;
    j["format"] = "steerlab-model";
    j["version"] = 1;
    j["config"] = {{"vocab_size", model.config.vocab_size}, {"d_model", model.config.d_model},
                   {"n_layers", model.config.n_layers},    {"n_heads", model.config.n_heads},
                   {"d_mlp", model.config.d_mlp},          {"ctx_len", model.config.ctx_len},
                   {"seed", model.config.seed}};
    j["frozen"] = model.frozen;
    json params = json::object();
    for (auto& [name, t] : model.named_params()) params[name] = tensor_to_json(*t);
    j["params"] = std::move(params);
    atomic_write_file(path, j.dump(2) + "\n");
}

LanguageModel load_model(const std::string& path) {
    const json j = parse_json_file(path);
    if (j.value("format", "") != "steerlab-model")
        throw parse_error(path + ": not a model checkpoint");
    const json& c = j.at("config");
    ModelConfig cfg;
    cfg.vocab_size = c.at("vocab_size").get<size_t>();
    cfg.d_model = c.at("d_model").get<size_t>();
    cfg.n_layers = c.at("n_layers").get<size_t>();
    cfg.n_heads = c.at("n_heads").get<size_t>();
    cfg.d_mlp = c.at("d_mlp").get<size_t>();
    cfg.ctx_len = c.at("ctx_len").get<size_t>();
    cfg.seed = c.at("seed").get<uint64_t>();
    cfg.validate();

    LanguageModel m = init_model(cfg);
    m.frozen = j.value("frozen", false);
    const json& params = j.at("params");
    for (auto& [name, t] : m.named_params()) {
        if (!params.contains(name)) throw parse_error(path + ": missing parameter " + name);
        Tensor loaded = tensor_from_json(params.at(name));
        if (!loaded.same_shape(*t))
            throw parse_error(path + ": parameter " + name + " has wrong shape");
        *t = std::move(loaded);
    }
    return m;
}

}  // namespace steerlab
