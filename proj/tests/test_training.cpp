#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "steerlab/data.hpp"
#include "steerlab/errors.hpp"
#include "steerlab/training.hpp"
#include "steerlab/util.hpp"

using namespace steerlab;

namespace {

ModelConfig tiny_config() {
    ModelConfig mc;
    mc.vocab_size = 48;
    mc.d_model = 16;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.d_mlp = 32;
    mc.ctx_len = 16;
    mc.seed = 7;
    return mc;
}

LanguageModel frozen_tiny(uint64_t seed = 7) {
    ModelConfig mc = tiny_config();
    mc.seed = seed;
    LanguageModel m = init_model(mc);
    m.frozen = true;
    return m;
}

std::vector<PolarityExample> tiny_examples() {
    std::vector<PolarityExample> out;
    // Queries start with BOS-style token 0; answers are two tokens each.
    out.push_back({{0, 5, 9, 1}, {20, 21}, {30, 31}, "c0"});
    out.push_back({{0, 6, 9, 1}, {22, 21}, {32, 31}, "c0"});
    out.push_back({{0, 7, 10, 1}, {20, 23}, {30, 33}, "c0"});
    out.push_back({{0, 8, 10, 1}, {22, 23}, {32, 33}, "c0"});
    return out;
}

// Objective value recomputed through the untaped production path
// (sequence_nll), used as the finite-difference oracle.
double objective_of(const LanguageModel& model, const TrainConfig& cfg,
                    const std::vector<PolarityExample>& exs, const Intervention& iv) {
    Hook hook;
    hook.site = cfg.site;
    hook.iv = &iv;
    hook.scale = SteerScale(cfg.m_train);
    double total = 0.0;
    for (const PolarityExample& ex : exs) {
        const double lp =
            sequence_nll(model, ex.query, ex.pos_answer, {hook}, cfg.length_normalize);
        if (cfg.objective == Objective::sft) {
            total += sft_loss(lp);
        } else {
            const double ln =
                sequence_nll(model, ex.query, ex.neg_answer, {hook}, cfg.length_normalize);
            total += split_loss(lp, ln, cfg.split);
        }
    }
    return total / static_cast<double>(exs.size());
}

std::vector<Tensor*> tensors_of(Intervention& iv) {
    switch (iv.form) {
        case InterventionForm::local_weight:
            return {&iv.dW, &iv.db};
        case InterventionForm::lora:
            return {&iv.B, &iv.A};
        case InterventionForm::vector:
            return {&iv.db};
    }
    return {};
}

// Analytic gradient of the one-example objective at the point reached after
// `warm_steps` SGD steps, recovered from the next update at lr=1 (update is
// x -= g, so g = x_k - x_{k+1}).  Training on a single example makes the
// batch sampling deterministic, so the two runs share a trajectory exactly.
// Also returns the evaluation point through `at_point`.
std::vector<Tensor> step_gradient(const LanguageModel& model, TrainConfig cfg,
                                  const PolarityExample& ex, size_t warm_steps,
                                  Intervention& at_point) {
    cfg.batch = 1;
    cfg.lr = 1.0;
    cfg.adam = false;
    cfg.steps = warm_steps;
    TrainResult at = train_intervention(model, cfg, {ex});
    cfg.steps = warm_steps + 1;
    TrainResult next = train_intervention(model, cfg, {ex});
    at_point = at.iv;
    std::vector<Tensor*> before = tensors_of(at.iv);
    std::vector<Tensor*> after = tensors_of(next.iv);
    std::vector<Tensor> grads;
    for (size_t p = 0; p < before.size(); ++p) {
        Tensor g(before[p]->rows, before[p]->cols);
        for (size_t i = 0; i < g.size(); ++i) g[i] = (*before[p])[i] - (*after[p])[i];
        grads.push_back(std::move(g));
    }
    return grads;
}

// Finite-difference check of `grads` against the sequence_nll oracle over a
// strided sample of coordinates.  Uses the 4th-order five-point stencil so
// truncation error stays below the tolerance even where the objective has
// strong curvature; the denominator floor absorbs near-zero coordinates.
void check_gradients(const LanguageModel& model, const TrainConfig& cfg,
                     const PolarityExample& ex, Intervention iv, std::vector<Tensor> grads,
                     double tol) {
    const double eps = 3e-4;
    const double denom_floor = 1e-4;
    std::vector<Tensor*> ts = tensors_of(iv);
    REQUIRE(ts.size() == grads.size());
    for (size_t p = 0; p < ts.size(); ++p) {
        Tensor* t = ts[p];
        const size_t stride = std::max<size_t>(1, t->size() / 24);
        for (size_t i = 0; i < t->size(); i += stride) {
            const double keep = t->data[i];
            auto f_at = [&](double delta) {
                t->data[i] = keep + delta;
                return objective_of(model, cfg, {ex}, iv);
            };
            const double fd = (8.0 * (f_at(eps) - f_at(-eps)) - (f_at(2 * eps) - f_at(-2 * eps))) /
                              (12.0 * eps);
            t->data[i] = keep;
            const double denom = std::max({std::fabs(fd), std::fabs(grads[p][i]), denom_floor});
            CHECK(std::fabs(fd - grads[p][i]) / denom < tol);
        }
    }
}

double mean_pref_at(const LanguageModel& model, const SiteId& site, const Intervention& iv,
                    double m, const std::vector<PolarityExample>& exs) {
    double s = 0.0;
    for (const PolarityExample& ex : exs) s += pref_odds(measure_pair(model, site, iv, m, ex));
    return s / static_cast<double>(exs.size());
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("split_loss hand values") {
    SplitConfig cfg;
    cfg.lambda_p = 1.0;
    cfg.lambda_n = 0.5;
    cfg.gamma = 2.0;
    cfg.theta = 1.5;
    // gap = 1 < theta: 1*1 + 0.5*2 + 2*relu(0.5) = 3
    CHECK(split_loss(1.0, 2.0, cfg) == doctest::Approx(3.0).epsilon(1e-12));
    // gap = 2.5 >= theta: margin met, only the utility part remains
    CHECK(split_loss(1.0, 3.5, cfg) == doctest::Approx(1.0 + 0.5 * 3.5).epsilon(1e-12));

    SplitConfig util_only = cfg;
    util_only.gamma = 0.0;
    CHECK(split_loss(0.7, 2.9, util_only) == doctest::Approx(0.7 + 0.5 * 2.9).epsilon(1e-12));
}

TEST_CASE("sft_loss is the positive loss and a split reduction") {
    CHECK(sft_loss(1.7) == 1.7);
    SplitConfig cfg;
    cfg.lambda_p = 1.0;
    cfg.lambda_n = 0.0;
    cfg.gamma = 0.0;
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const double lp = 5.0 * rng.uniform();
        const double ln = 5.0 * rng.uniform();
        CHECK(split_loss(lp, ln, cfg) == sft_loss(lp));
    }
    CHECK_THROWS_AS(sft_loss(std::numeric_limits<double>::infinity()), argument_error);
}

TEST_CASE("split_loss properties: non-negative, monotone in gap, flat past theta") {
    SplitConfig cfg;  // defaults lambda_p=lambda_n=gamma=1, theta=2
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        const double lp = 4.0 * rng.uniform();
        const double ln = 4.0 * rng.uniform();
        CHECK(split_loss(lp, ln, cfg) >= 0.0);
    }
    // Fixed lp + ln (utility part constant), increasing gap: non-increasing.
    const double total = 4.0;
    double prev = std::numeric_limits<double>::infinity();
    for (double gap = -3.0; gap <= 3.01; gap += 0.25) {
        const double lp = (total - gap) / 2.0, ln = (total + gap) / 2.0;
        const double v = split_loss(lp, ln, cfg);
        CHECK(v <= prev + 1e-12);
        prev = v;
    }
    // Exactly flat once gap >= theta.
    auto at_gap = [&](double gap) {
        return split_loss((total - gap) / 2.0, (total + gap) / 2.0, cfg);
    };
    CHECK(at_gap(2.0) == doctest::Approx(at_gap(2.7)).epsilon(1e-14));
    CHECK(at_gap(2.7) == doctest::Approx(at_gap(3.4)).epsilon(1e-14));
}

TEST_CASE("split config validation") {
    SplitConfig bad;
    bad.lambda_p = -0.1;
    CHECK_THROWS_AS(bad.validate(), config_error);
    SplitConfig untied;
    untied.lambda_p = 0.0;
    untied.gamma = 0.0;
    CHECK_THROWS_AS(untied.validate(), config_error);
    SplitConfig ok;
    ok.lambda_p = 0.0;  // gamma still positive
    CHECK_NOTHROW(ok.validate());
    CHECK_THROWS_AS(split_loss(std::nan(""), 1.0, ok), argument_error);
}

TEST_CASE("split_loss_grad matches finite differences away from the kink") {
    SplitConfig cfg;
    cfg.lambda_p = 0.8;
    cfg.lambda_n = 0.6;
    cfg.gamma = 1.3;
    cfg.theta = 1.0;
    const double eps = 1e-6;
    for (double gap : {-1.5, 0.2, 0.9, 1.4, 3.0}) {
        const double lp = 1.0, ln = lp + gap;
        const auto [dlp, dln] = split_loss_grad(lp, ln, cfg);
        const double fd_p = (split_loss(lp + eps, ln, cfg) - split_loss(lp - eps, ln, cfg)) / (2 * eps);
        const double fd_n = (split_loss(lp, ln + eps, cfg) - split_loss(lp, ln - eps, cfg)) / (2 * eps);
        CHECK(dlp == doctest::Approx(fd_p).epsilon(1e-6));
        CHECK(dln == doctest::Approx(fd_n).epsilon(1e-6));
    }
    // At the kink (gap == theta) the flat branch is taken.
    const auto [dlp, dln] = split_loss_grad(1.0, 2.0, cfg);
    CHECK(dlp == cfg.lambda_p);
    CHECK(dln == cfg.lambda_n);
    // Strictly inside the margin the hinge is active.
    const auto [alp, aln] = split_loss_grad(1.0, 1.5, cfg);
    CHECK(alp == cfg.lambda_p + cfg.gamma);
    CHECK(aln == cfg.lambda_n - cfg.gamma);
}

TEST_CASE("objective name round trip and reps rejection") {
    for (Objective o : {Objective::sft, Objective::split, Objective::reps})
        CHECK(objective_from_name(objective_name(o)) == o);
    CHECK_THROWS_AS(objective_from_name("dpo"), argument_error);

    LanguageModel model = frozen_tiny();
    TrainConfig cfg;
    cfg.objective = Objective::reps;
    cfg.site = {1, SiteKind::residual};
    CHECK_THROWS_AS(train_intervention(model, cfg, tiny_examples()), not_implemented_error);
}

TEST_CASE("init_intervention shapes, zero start, and validation") {
    LanguageModel model = frozen_tiny();
    TrainConfig cfg;
    cfg.site = {0, SiteKind::mlp_down};

    cfg.form = InterventionForm::vector;
    Intervention v = init_intervention(model, cfg);
    CHECK(v.db.rows == 1);
    CHECK(v.db.cols == 16);
    for (double x : v.db.data) CHECK(x == 0.0);

    cfg.form = InterventionForm::local_weight;
    Intervention lw = init_intervention(model, cfg);
    CHECK(lw.dW.rows == 16);
    CHECK(lw.dW.cols == 32);
    for (double x : lw.dW.data) CHECK(x == 0.0);

    cfg.form = InterventionForm::lora;
    cfg.lora_rank = 3;
    Intervention lo = init_intervention(model, cfg);
    CHECK(lo.B.rows == 16);
    CHECK(lo.B.cols == 3);
    CHECK(lo.A.rows == 3);
    CHECK(lo.A.cols == 32);
    for (double x : lo.B.data) CHECK(x == 0.0);
    double a_norm = 0.0;
    for (double x : lo.A.data) a_norm += x * x;
    CHECK(a_norm > 0.0);        // A is randomly initialized
    CHECK(a_norm < 1.0);        // ... but small

    cfg.lora_rank = 17;  // exceeds min(16, 32)
    CHECK_THROWS_AS(init_intervention(model, cfg), config_error);
    cfg.lora_rank = 0;
    CHECK_THROWS_AS(init_intervention(model, cfg), config_error);

    cfg.form = InterventionForm::local_weight;
    cfg.site = {1, SiteKind::residual};
    CHECK_THROWS_AS(init_intervention(model, cfg), site_error);
    cfg.site = {5, SiteKind::residual};
    cfg.form = InterventionForm::vector;
    CHECK_THROWS_AS(init_intervention(model, cfg), site_error);
}

TEST_CASE("zero-step training is an exact no-op at any scale") {
    LanguageModel model = frozen_tiny();
    const std::vector<PolarityExample> exs = tiny_examples();
    for (InterventionForm form :
         {InterventionForm::vector, InterventionForm::lora, InterventionForm::local_weight}) {
        TrainConfig cfg;
        cfg.form = form;
        cfg.lora_rank = 2;
        cfg.site = {0, SiteKind::mlp_down};
        cfg.steps = 0;
        TrainResult r = train_intervention(model, cfg, exs);
        CHECK(r.log.empty());
        for (double m : {-3.0, 0.4, 2.7}) {
            const LossPair with = measure_pair(model, cfg.site, r.iv, m, exs[0]);
            const double lp0 = sequence_nll(model, exs[0].query, exs[0].pos_answer);
            const double ln0 = sequence_nll(model, exs[0].query, exs[0].neg_answer);
            CHECK(with.lp == lp0);
            CHECK(with.ln == ln0);
        }
    }
}

TEST_CASE("training gradients match finite differences (all forms, both objectives)") {
    LanguageModel model = frozen_tiny();
    const std::vector<PolarityExample> exs = tiny_examples();
    struct Case {
        Objective obj;
        InterventionForm form;
        SiteId site;
        double theta;
        size_t warm;
    };
    // theta=6 keeps the hinge active (gap starts near 0); theta=-6 keeps it
    // inactive, covering both margin regimes.  warm=1 checks at a nonzero
    // point, where LoRA's A also receives gradient (B is zero at init).
    const std::vector<Case> cases = {
        {Objective::split, InterventionForm::vector, {1, SiteKind::residual}, 6.0, 0},
        {Objective::split, InterventionForm::vector, {0, SiteKind::mlp_down}, -6.0, 0},
        {Objective::split, InterventionForm::lora, {0, SiteKind::mlp_down}, 6.0, 1},
        {Objective::split, InterventionForm::local_weight, {1, SiteKind::mlp_down}, -6.0, 0},
        {Objective::sft, InterventionForm::vector, {1, SiteKind::residual}, 0.0, 1},
        {Objective::sft, InterventionForm::lora, {1, SiteKind::mlp_down}, 0.0, 0},
    };
    for (size_t ci = 0; ci < cases.size(); ++ci) {
        const Case& c = cases[ci];
        CAPTURE(objective_name(c.obj));
        CAPTURE(form_name(c.form));
        TrainConfig cfg;
        cfg.objective = c.obj;
        cfg.form = c.form;
        cfg.lora_rank = 2;
        cfg.site = c.site;
        cfg.seed = 19;
        cfg.split.theta = c.theta;
        cfg.m_train = 1.0;
        const PolarityExample& ex = exs[ci % exs.size()];
        Intervention at;
        std::vector<Tensor> grads = step_gradient(model, cfg, ex, c.warm, at);
        check_gradients(model, cfg, ex, at, std::move(grads), 1e-4);
    }
}

TEST_CASE("length-normalized gradients also match finite differences") {
    LanguageModel model = frozen_tiny(21);
    const PolarityExample ex = tiny_examples()[1];
    TrainConfig cfg;
    cfg.objective = Objective::split;
    cfg.form = InterventionForm::vector;
    cfg.site = {1, SiteKind::residual};
    cfg.length_normalize = true;
    cfg.split.theta = 6.0;
    Intervention at;
    std::vector<Tensor> grads = step_gradient(model, cfg, ex, 0, at);
    check_gradients(model, cfg, ex, at, std::move(grads), 1e-4);
}

TEST_CASE("base model is never touched: checksum identity and loss sensitivity") {
    LanguageModel model = frozen_tiny();
    const uint64_t before = model.checksum();
    TrainConfig cfg;
    cfg.site = {1, SiteKind::residual};
    cfg.steps = 12;
    cfg.batch = 2;
    cfg.lr = 0.2;
    TrainResult r = train_intervention(model, cfg, tiny_examples());
    CHECK(model.checksum() == before);
    CHECK(r.steps_run == 12);
    CHECK(r.log.size() == 12);

    // The loss does depend on base parameters: perturbing one changes it.
    const double base_obj = objective_of(model, cfg, tiny_examples(), r.iv);
    LanguageModel poked = model;
    poked.layers[1].w_down.data[5] += 1e-3;
    CHECK(poked.checksum() != before);
    const double poked_obj = objective_of(poked, cfg, tiny_examples(), r.iv);
    CHECK(base_obj != poked_obj);
}

TEST_CASE("training is deterministic per seed and sensitive to it") {
    LanguageModel model = frozen_tiny();
    TrainConfig cfg;
    cfg.site = {0, SiteKind::mlp_down};
    cfg.form = InterventionForm::lora;
    cfg.lora_rank = 2;
    cfg.steps = 8;
    cfg.batch = 3;
    cfg.seed = 5;
    TrainResult a = train_intervention(model, cfg, tiny_examples());
    TrainResult b = train_intervention(model, cfg, tiny_examples());
    CHECK(a.iv.B.data == b.iv.B.data);
    CHECK(a.iv.A.data == b.iv.A.data);
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);

    cfg.seed = 6;
    TrainResult c = train_intervention(model, cfg, tiny_examples());
    CHECK(a.iv.A.data != c.iv.A.data);
}

TEST_CASE("adam variant runs and differs from sgd") {
    LanguageModel model = frozen_tiny();
    TrainConfig cfg;
    cfg.site = {1, SiteKind::residual};
    cfg.steps = 6;
    cfg.batch = 2;
    TrainResult sgd = train_intervention(model, cfg, tiny_examples());
    cfg.adam = true;
    TrainResult adam = train_intervention(model, cfg, tiny_examples());
    CHECK(sgd.iv.db.data != adam.iv.db.data);
    CHECK(std::isfinite(adam.final_loss));
}

TEST_CASE("split training raises preference odds on the training concept") {
    LanguageModel model = frozen_tiny(3);
    const std::vector<PolarityExample> exs = tiny_examples();
    const SiteId site{1, SiteKind::residual};
    TrainConfig cfg;
    cfg.objective = Objective::split;
    cfg.form = InterventionForm::vector;
    cfg.site = site;
    cfg.steps = 40;
    cfg.batch = 4;
    cfg.lr = 0.3;
    cfg.seed = 2;
    TrainResult r = train_intervention(model, cfg, exs);
    const Intervention untrained = init_intervention(model, cfg);
    const double before = mean_pref_at(model, site, untrained, 1.0, exs);
    const double after = mean_pref_at(model, site, r.iv, 1.0, exs);
    CHECK(after > before);
    // The logged gap mean improves over training as well.
    CHECK(r.log.back().gap_mean > r.log.front().gap_mean);
}

TEST_CASE("train_intervention input validation") {
    LanguageModel model = frozen_tiny();
    TrainConfig cfg;
    cfg.site = {1, SiteKind::residual};

    LanguageModel thawed = frozen_tiny();
    thawed.frozen = false;
    CHECK_THROWS_AS(train_intervention(thawed, cfg, tiny_examples()), training_error);

    CHECK_THROWS_AS(train_intervention(model, cfg, {}), argument_error);

    std::vector<PolarityExample> bad = tiny_examples();
    bad[1].pos_answer.clear();
    CHECK_THROWS_AS(train_intervention(model, cfg, bad), argument_error);

    std::vector<PolarityExample> overlong = tiny_examples();
    overlong[0].pos_answer.assign(20, 3);
    CHECK_THROWS_AS(train_intervention(model, cfg, overlong), training_error);

    TrainConfig bad_lr = cfg;
    bad_lr.lr = 0.0;
    CHECK_THROWS_AS(train_intervention(model, bad_lr, tiny_examples()), config_error);
    TrainConfig bad_batch = cfg;
    bad_batch.batch = 0;
    CHECK_THROWS_AS(train_intervention(model, bad_batch, tiny_examples()), config_error);
}

TEST_CASE("divergence aborts with the last finite state attached") {
    LanguageModel model = frozen_tiny();
    TrainConfig cfg;
    cfg.site = {1, SiteKind::residual};
    cfg.steps = 10;
    cfg.batch = 1;
    // One update of size lr*m*g overflows to inf; the next loss is non-finite.
    cfg.lr = 1e160;
    cfg.m_train = 1e160;
    try {
        train_intervention(model, cfg, tiny_examples());
        FAIL("expected training_error");
    } catch (const training_error& e) {
        CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
        REQUIRE(!e.last_state_json.empty());
        const InterventionCheckpoint ckpt =
            intervention_from_json(json::parse(e.last_state_json));
        CHECK(ckpt.iv.form == InterventionForm::vector);
        // The carried state is the zero init: the post-step state never
        // produced a finite loss, so it is not "good".
        for (double x : ckpt.iv.db.data) CHECK(x == 0.0);
        CHECK(ckpt.meta.at("failed_step").get<size_t>() >= 1);
    }
}

TEST_CASE("diffmean_vector hand values and properties") {
    const std::vector<Tensor> pos = {Tensor(1, 2, {1.0, 0.0}), Tensor(1, 2, {3.0, 0.0})};
    const std::vector<Tensor> neg = {Tensor(1, 2, {0.0, 1.0}), Tensor(1, 2, {0.0, 3.0})};
    Intervention dm = diffmean_vector(pos, neg);
    CHECK(dm.form == InterventionForm::vector);
    CHECK(dm.db[0] == 2.0);
    CHECK(dm.db[1] == -2.0);

    // pos == neg -> zero vector.
    Intervention zero = diffmean_vector(pos, pos);
    CHECK(zero.db[0] == 0.0);
    CHECK(zero.db[1] == 0.0);

    // Permutation within a set changes nothing.
    const std::vector<Tensor> pos_swapped = {pos[1], pos[0]};
    Intervention dm2 = diffmean_vector(pos_swapped, neg);
    CHECK(dm2.db.data == dm.db.data);

    // Linearity: scaling all activations by c scales the vector by c.
    auto scaled = [](const std::vector<Tensor>& acts, double c) {
        std::vector<Tensor> out = acts;
        for (Tensor& t : out)
            for (double& x : t.data) x *= c;
        return out;
    };
    Intervention dm3 = diffmean_vector(scaled(pos, 2.5), scaled(neg, 2.5));
    CHECK(dm3.db[0] == doctest::Approx(2.5 * dm.db[0]).epsilon(1e-12));
    CHECK(dm3.db[1] == doctest::Approx(2.5 * dm.db[1]).epsilon(1e-12));

    CHECK_THROWS_AS(diffmean_vector({}, neg), argument_error);
    CHECK_THROWS_AS(diffmean_vector(pos, {}), argument_error);
    const std::vector<Tensor> wide = {Tensor(1, 3)};
    CHECK_THROWS_AS(diffmean_vector(pos, wide), dim_error);
}

TEST_CASE("collect_answer_activations matches direct capture at the last answer token") {
    LanguageModel model = frozen_tiny();
    const std::vector<PolarityExample> exs = tiny_examples();
    const SiteId site{1, SiteKind::residual};
    auto [pos, neg] = collect_answer_activations(model, site, exs);
    REQUIRE(pos.size() == exs.size());
    REQUIRE(neg.size() == exs.size());
    for (size_t i = 0; i < exs.size(); ++i) {
        CHECK(pos[i].rows == 1);
        CHECK(pos[i].cols == model.config.d_model);
        std::vector<size_t> toks = exs[i].query;
        toks.insert(toks.end(), exs[i].pos_answer.begin(), exs[i].pos_answer.end());
        const Tensor direct = capture_activation(model, toks, site, toks.size() - 1);
        CHECK(pos[i].data == direct.data);
    }
    CHECK_THROWS_AS(collect_answer_activations(model, site, {}), argument_error);
}

TEST_CASE("intervention checkpoint round trips bit-exactly for all forms") {
    Rng rng(9);
    auto randomize = [&](Tensor& t) {
        for (double& x : t.data) x = rng.normal();
    };
    std::vector<InterventionCheckpoint> ckpts;
    {
        Tensor db(1, 5);
        randomize(db);
        ckpts.push_back({Intervention::make_vector(std::move(db)),
                         {2, SiteKind::residual},
                         json{{"objective", "split"}, {"seed", 7}}});
    }
    {
        Tensor B(5, 2), A(2, 6);
        randomize(B);
        randomize(A);
        ckpts.push_back(
            {Intervention::make_lora(std::move(B), std::move(A)), {0, SiteKind::mlp_down},
             json::object()});
    }
    {
        Tensor dW(5, 6), db(1, 5);
        randomize(dW);
        randomize(db);
        ckpts.push_back({Intervention::make_local_weight(std::move(dW), std::move(db)),
                         {1, SiteKind::mlp_down},
                         json{{"note", "test"}}});
    }
    for (const InterventionCheckpoint& c : ckpts) {
        const std::string path = temp_path("steerlab_iv_ckpt.json");
        save_intervention(c, path);
        const InterventionCheckpoint back = load_intervention(path);
        CHECK(back.iv.form == c.iv.form);
        CHECK(back.site == c.site);
        CHECK(back.meta == c.meta);
        CHECK(back.iv.dW.data == c.iv.dW.data);
        CHECK(back.iv.db.data == c.iv.db.data);
        CHECK(back.iv.B.data == c.iv.B.data);
        CHECK(back.iv.A.data == c.iv.A.data);
        std::remove(path.c_str());
    }

    CHECK_THROWS_AS(intervention_from_json(json{{"format", "bogus"}}), parse_error);
    json missing = intervention_to_json(ckpts[0]);
    missing.erase("tensors");
    CHECK_THROWS_AS(intervention_from_json(missing), parse_error);
}

TEST_CASE("training log JSONL round trip") {
    std::vector<TrainStepRecord> log;
    for (size_t s = 0; s < 5; ++s) {
        TrainStepRecord r;
        r.step = s;
        r.loss = 3.0 / static_cast<double>(s + 1);
        r.util_term = r.loss * 0.75;
        r.pref_term = r.loss * 0.25;
        r.gap_mean = 0.1 * static_cast<double>(s) - 0.05;
        log.push_back(r);
    }
    const std::string path = temp_path("steerlab_train_log.jsonl");
    save_train_log(log, path);
    const std::vector<TrainStepRecord> back = load_train_log(path);
    REQUIRE(back.size() == log.size());
    for (size_t i = 0; i < log.size(); ++i) {
        CHECK(back[i].step == log[i].step);
        CHECK(back[i].loss == log[i].loss);
        CHECK(back[i].util_term == log[i].util_term);
        CHECK(back[i].pref_term == log[i].pref_term);
        CHECK(back[i].gap_mean == log[i].gap_mean);
    }
    // Line count matches step count.
    const std::string text = read_file(path);
    size_t lines = 0;
    for (char ch : text)
        if (ch == '\n') ++lines;
    CHECK(lines == log.size());
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_train_log(path), std::runtime_error);  // file gone
}
