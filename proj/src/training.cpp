#include "steerlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "steerlab/errors.hpp"
#include "steerlab/util.hpp"

namespace steerlab {

namespace {

// The trainable tensors of an intervention in the canonical order
// (dW,db | B,A | db), matching ForwardRun::hook_params.
std::vector<Tensor*> iv_tensors(Intervention& iv) {
    switch (iv.form) {
        case InterventionForm::local_weight:
            return {&iv.dW, &iv.db};
        case InterventionForm::lora:
            return {&iv.B, &iv.A};
        case InterventionForm::vector:
            return {&iv.db};
    }
    throw argument_error("unknown intervention form");
}

struct ExampleEval {
    double loss = 0.0;
    double util = 0.0;
    double pref = 0.0;
    double gap = 0.0;
};

// Evaluates the objective on one example with hooks live at m_train and adds
// the weighted intervention gradients into `grad`.  SPLIT runs the two
// completions as independent tapes and combines their parameter gradients
// with the analytic loss weights (chain rule through the scalar losses).
ExampleEval accumulate_example(const LanguageModel& model, const TrainConfig& cfg,
                               const PolarityExample& ex, const Intervention& iv,
                               std::vector<Tensor>& grad) {
    Hook hook;
    hook.site = cfg.site;
    hook.iv = &iv;
    hook.scale = SteerScale(cfg.m_train);
    ForwardOptions opts;
    opts.hooks_need_grad = true;

    auto taped_nll = [&](const std::vector<size_t>& answer) {
        std::vector<size_t> tokens = ex.query;
        tokens.insert(tokens.end(), answer.begin(), answer.end());
        ForwardRun fr = run_forward(model, tokens, {hook}, opts);
        std::vector<size_t> rows(answer.size()), targets(answer.size());
        for (size_t k = 0; k < answer.size(); ++k) {
            rows[k] = ex.query.size() + k - 1;
            targets[k] = answer[k];
        }
        Var nll = fr.tape.cross_entropy_sum(fr.logits, rows, targets);
        return std::make_pair(std::move(fr), nll);
    };
    auto add_scaled = [&](ForwardRun& fr, Var nll, double w) {
        if (w == 0.0) return;
        fr.tape.backward(nll);
        for (size_t j = 0; j < grad.size(); ++j) {
            const Tensor& g = fr.tape.grad(fr.hook_params[0][j]);
            for (size_t i = 0; i < g.size(); ++i) grad[j][i] += w * g[i];
        }
    };

    auto [fr_p, nll_p] = taped_nll(ex.pos_answer);
    const double norm_p =
        cfg.length_normalize ? 1.0 / static_cast<double>(ex.pos_answer.size()) : 1.0;
    const double lp = fr_p.tape.val(nll_p)[0] * norm_p;

    // Losses are combined with raw arithmetic rather than split_loss so a
    // non-finite value propagates into ev.loss for the step-level abort
    // instead of tripping input validation here.
    ExampleEval ev;
    if (cfg.objective == Objective::sft) {
        ev.loss = lp;
        ev.util = lp;
        if (!std::isfinite(ev.loss)) return ev;
        add_scaled(fr_p, nll_p, norm_p);
        return ev;
    }

    auto [fr_n, nll_n] = taped_nll(ex.neg_answer);
    const double norm_n =
        cfg.length_normalize ? 1.0 / static_cast<double>(ex.neg_answer.size()) : 1.0;
    const double ln = fr_n.tape.val(nll_n)[0] * norm_n;

    ev.gap = ln - lp;
    ev.util = cfg.split.lambda_p * lp + cfg.split.lambda_n * ln;
    ev.pref = cfg.split.gamma * std::max(0.0, cfg.split.theta - ev.gap);
    ev.loss = ev.util + ev.pref;
    if (!std::isfinite(ev.loss)) return ev;
    const auto [dlp, dln] = split_loss_grad(lp, ln, cfg.split);
    add_scaled(fr_p, nll_p, dlp * norm_p);
    add_scaled(fr_n, nll_n, dln * norm_n);
    return ev;
}

json tensors_json(const Intervention& iv) {
    json t = json::object();
    switch (iv.form) {
        case InterventionForm::local_weight:
            t["dW"] = tensor_to_json(iv.dW);
            t["db"] = tensor_to_json(iv.db);
            break;
        case InterventionForm::lora:
            t["B"] = tensor_to_json(iv.B);
            t["A"] = tensor_to_json(iv.A);
            break;
        case InterventionForm::vector:
            t["db"] = tensor_to_json(iv.db);
            break;
    }
    return t;
}

}  // namespace

void SplitConfig::validate() const {
    if (!(std::isfinite(lambda_p) && std::isfinite(lambda_n) && std::isfinite(gamma) &&
          std::isfinite(theta)))
        throw config_error("split weights must be finite");
    if (lambda_p < 0.0 || lambda_n < 0.0 || gamma < 0.0)
        throw config_error("split weights must be non-negative");
    if (lambda_p == 0.0 && gamma == 0.0)
        throw config_error("at least one of lambda_p and gamma must be positive");
}

double split_loss(double lp, double ln, const SplitConfig& cfg) {
    cfg.validate();
    if (!std::isfinite(lp) || !std::isfinite(ln))
        throw argument_error("split_loss: losses must be finite");
    return cfg.lambda_p * lp + cfg.lambda_n * ln + cfg.gamma * std::max(0.0, cfg.theta - (ln - lp));
}

std::pair<double, double> split_loss_grad(double lp, double ln, const SplitConfig& cfg) {
    cfg.validate();
    if (!std::isfinite(lp) || !std::isfinite(ln))
        throw argument_error("split_loss_grad: losses must be finite");
    const bool active = (ln - lp) < cfg.theta;
    const double g = active ? cfg.gamma : 0.0;
    return {cfg.lambda_p + g, cfg.lambda_n - g};
}

double sft_loss(double lp) {
    if (!std::isfinite(lp)) throw argument_error("sft_loss: loss must be finite");
    return lp;
}

std::string objective_name(Objective o) {
    switch (o) {
        case Objective::sft:
            return "sft";
        case Objective::split:
            return "split";
        case Objective::reps:
            return "reps";
    }
    throw argument_error("unknown objective");
}

Objective objective_from_name(const std::string& name) {
    if (name == "sft") return Objective::sft;
    if (name == "split") return Objective::split;
    if (name == "reps") return Objective::reps;
    throw argument_error("unknown objective name: " + name);
}

void TrainConfig::validate() const {
    if (!std::isfinite(lr) || lr <= 0.0) throw config_error("lr must be positive");
    if (batch == 0) throw config_error("batch must be positive");
    if (!std::isfinite(m_train)) throw config_error("m_train must be finite");
    if (form == InterventionForm::lora && lora_rank == 0)
        throw config_error("lora rank must be positive");
    if (objective == Objective::split) split.validate();
}

Intervention init_intervention(const LanguageModel& model, const TrainConfig& cfg) {
    cfg.validate();
    model.validate_site(cfg.site);
    const size_t d_out = model.config.d_model;
    const size_t d_in =
        cfg.site.kind == SiteKind::mlp_down ? model.config.d_mlp : model.config.d_model;
    if (cfg.site.kind == SiteKind::residual && cfg.form != InterventionForm::vector)
        throw site_error("residual sites accept only the steering-vector form; " +
                         form_name(cfg.form) + " needs an affine map");
    switch (cfg.form) {
        case InterventionForm::vector:
            return Intervention::make_vector(Tensor(1, d_out));
        case InterventionForm::local_weight:
            return Intervention::make_local_weight(Tensor(d_out, d_in), Tensor(1, d_out));
        case InterventionForm::lora: {
            if (cfg.lora_rank > std::min(d_in, d_out))
                throw config_error("lora rank " + std::to_string(cfg.lora_rank) +
                                   " exceeds site dimensions " + std::to_string(d_out) + "x" +
                                   std::to_string(d_in));
            Tensor B(d_out, cfg.lora_rank);
            Tensor A(cfg.lora_rank, d_in);
            Rng rng(cfg.seed ^ 0x5eedf0a7c0ffee11ULL);
            for (size_t i = 0; i < A.size(); ++i) A[i] = 0.02 * rng.normal();
            return Intervention::make_lora(std::move(B), std::move(A));
        }
    }
    throw argument_error("unknown intervention form");
}

TrainResult train_intervention(const LanguageModel& model, const TrainConfig& cfg,
                               const std::vector<PolarityExample>& train_set) {
    cfg.validate();
    if (cfg.objective == Objective::reps)
        throw not_implemented_error("reps objective (external method)");
    if (!model.frozen) throw training_error("train_intervention: base model must be frozen");
    if (train_set.empty()) throw argument_error("train_intervention: empty training set");
    for (const PolarityExample& ex : train_set) {
        if (ex.query.empty() || ex.pos_answer.empty() || ex.neg_answer.empty())
            throw argument_error("train_intervention: example with empty query or answer");
        const size_t longest =
            ex.query.size() + std::max(ex.pos_answer.size(), ex.neg_answer.size());
        if (longest > model.config.ctx_len)
            throw training_error("train_intervention: example exceeds context length");
    }
    const uint64_t base_checksum = model.checksum();

    TrainResult result;
    result.iv = init_intervention(model, cfg);
    std::vector<Tensor*> tensors = iv_tensors(result.iv);

    std::vector<Tensor> mom1, mom2;  // Adam moments, allocated lazily
    if (cfg.adam) {
        for (Tensor* t : tensors) {
            mom1.emplace_back(t->rows, t->cols);
            mom2.emplace_back(t->rows, t->cols);
        }
    }
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    Rng rng(cfg.seed);
    Intervention last_good = result.iv;
    for (size_t step = 0; step < cfg.steps; ++step) {
        std::vector<Tensor> grad;
        for (Tensor* t : tensors) grad.emplace_back(t->rows, t->cols);
        double loss_sum = 0.0, util_sum = 0.0, pref_sum = 0.0, gap_sum = 0.0;
        for (size_t b = 0; b < cfg.batch; ++b) {
            const PolarityExample& ex = train_set[rng.uniform_int(train_set.size())];
            const ExampleEval ev = accumulate_example(model, cfg, ex, result.iv, grad);
            loss_sum += ev.loss;
            util_sum += ev.util;
            pref_sum += ev.pref;
            gap_sum += ev.gap;
        }
        const double inv_b = 1.0 / static_cast<double>(cfg.batch);
        TrainStepRecord rec;
        rec.step = step;
        rec.loss = loss_sum * inv_b;
        rec.util_term = util_sum * inv_b;
        rec.pref_term = pref_sum * inv_b;
        rec.gap_mean = gap_sum * inv_b;
        if (!std::isfinite(rec.loss)) {
            InterventionCheckpoint ckpt{std::move(last_good), cfg.site, json::object()};
            ckpt.meta["failed_step"] = step;
            throw training_error(
                "train_intervention: non-finite loss at step " + std::to_string(step),
                intervention_to_json(ckpt).dump());
        }
        last_good = result.iv;
        result.log.push_back(rec);

        if (cfg.adam) {
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step + 1));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step + 1));
            for (size_t p = 0; p < tensors.size(); ++p) {
                Tensor* t = tensors[p];
                for (size_t i = 0; i < t->size(); ++i) {
                    const double g = grad[p][i] * inv_b;
                    mom1[p][i] = beta1 * mom1[p][i] + (1.0 - beta1) * g;
                    mom2[p][i] = beta2 * mom2[p][i] + (1.0 - beta2) * g * g;
                    t->data[i] -= cfg.lr * (mom1[p][i] / bc1) / (std::sqrt(mom2[p][i] / bc2) + eps);
                }
            }
        } else {
            for (size_t p = 0; p < tensors.size(); ++p) {
                Tensor* t = tensors[p];
                for (size_t i = 0; i < t->size(); ++i) t->data[i] -= cfg.lr * grad[p][i] * inv_b;
            }
        }
    }

    if (model.checksum() != base_checksum)
        throw training_error("train_intervention: base model parameters changed during training");
    result.final_loss = result.log.empty() ? 0.0 : result.log.back().loss;
    result.steps_run = cfg.steps;
    return result;
}

Intervention diffmean_vector(const std::vector<Tensor>& pos_acts,
                             const std::vector<Tensor>& neg_acts) {
    if (pos_acts.empty() || neg_acts.empty())
        throw argument_error("diffmean_vector: both activation sets must be nonempty");
    const size_t d = pos_acts.front().cols;
    auto mean_of = [&](const std::vector<Tensor>& acts) {
        Tensor m(1, d);
        for (const Tensor& a : acts) {
            if (a.rows != 1 || a.cols != d)
                throw dim_error("diffmean_vector: activations must all be 1x" + std::to_string(d) +
                                " row vectors");
            for (size_t i = 0; i < d; ++i) m[i] += a[i];
        }
        const double inv = 1.0 / static_cast<double>(acts.size());
        for (size_t i = 0; i < d; ++i) m[i] *= inv;
        return m;
    };
    const Tensor mp = mean_of(pos_acts);
    const Tensor mn = mean_of(neg_acts);
    Tensor db(1, d);
    for (size_t i = 0; i < d; ++i) db[i] = mp[i] - mn[i];
    return Intervention::make_vector(std::move(db));
}

std::pair<std::vector<Tensor>, std::vector<Tensor>> collect_answer_activations(
    const LanguageModel& model, const SiteId& site,
    const std::vector<PolarityExample>& examples) {
    if (examples.empty()) throw argument_error("collect_answer_activations: no examples");
    std::vector<Tensor> pos, neg;
    pos.reserve(examples.size());
    neg.reserve(examples.size());
    for (const PolarityExample& ex : examples) {
        auto last_answer_act = [&](const std::vector<size_t>& answer) {
            std::vector<size_t> tokens = ex.query;
            tokens.insert(tokens.end(), answer.begin(), answer.end());
            return capture_activation(model, tokens, site, tokens.size() - 1);
        };
        pos.push_back(last_answer_act(ex.pos_answer));
        neg.push_back(last_answer_act(ex.neg_answer));
    }
    return {std::move(pos), std::move(neg)};
}

json intervention_to_json(const InterventionCheckpoint& ckpt) {
    json j;
    j["format"] = "steerlab-intervention";
    j["version"] = 1;
    j["form"] = form_name(ckpt.iv.form);
    j["site"] = {{"layer", ckpt.site.layer}, {"kind", site_kind_name(ckpt.site.kind)}};
    j["tensors"] = tensors_json(ckpt.iv);
    j["meta"] = ckpt.meta.is_null() ? json::object() : ckpt.meta;
    return j;
}

InterventionCheckpoint intervention_from_json(const json& j) {
    try {
        if (j.value("format", "") != "steerlab-intervention")
            throw parse_error("not an intervention checkpoint");
        InterventionCheckpoint ckpt;
        const json& t = j.at("tensors");
        switch (form_from_name(j.at("form").get<std::string>())) {
            case InterventionForm::local_weight:
                ckpt.iv = Intervention::make_local_weight(tensor_from_json(t.at("dW")),
                                                          tensor_from_json(t.at("db")));
                break;
            case InterventionForm::lora:
                ckpt.iv = Intervention::make_lora(tensor_from_json(t.at("B")),
                                                  tensor_from_json(t.at("A")));
                break;
            case InterventionForm::vector:
                ckpt.iv = Intervention::make_vector(tensor_from_json(t.at("db")));
                break;
        }
        ckpt.site.layer = j.at("site").at("layer").get<size_t>();
        ckpt.site.kind = site_kind_from_name(j.at("site").at("kind").get<std::string>());
        ckpt.meta = j.value("meta", json::object());
        return ckpt;
    } catch (const json::exception& e) {
        throw parse_error(std::string("intervention checkpoint: ") + e.what());
    }
}

void save_intervention(const InterventionCheckpoint& ckpt, const std::string& path) {
    atomic_write_file(path, intervention_to_json(ckpt).dump(2) + "\n");
}

InterventionCheckpoint load_intervention(const std::string& path) {
    return intervention_from_json(parse_json_file(path));
}

void save_train_log(const std::vector<TrainStepRecord>& log, const std::string& path) {
    std::string out;
    for (const TrainStepRecord& rec : log) {
        json j{{"step", rec.step},
               {"loss", rec.loss},
               {"util_term", rec.util_term},
               {"pref_term", rec.pref_term},
               {"gap_mean", rec.gap_mean}};
        out += j.dump();
        out += '\n';
    }
    atomic_write_file(path, out);
}

std::vector<TrainStepRecord> load_train_log(const std::string& path) {
    const std::string text = read_file(path);
    std::vector<TrainStepRecord> log;
    size_t start = 0, line_no = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        ++line_no;
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded())
            throw parse_error(path + ": line " + std::to_string(line_no) + ": invalid JSON");
        try {
            TrainStepRecord rec;
            rec.step = j.at("step").get<size_t>();
            rec.loss = j.at("loss").get<double>();
            rec.util_term = j.at("util_term").get<double>();
            rec.pref_term = j.at("pref_term").get<double>();
            rec.gap_mean = j.at("gap_mean").get<double>();
            log.push_back(rec);
        } catch (const json::exception& e) {
            throw parse_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return log;
}

}  // namespace steerlab
