#include <cmath>

#include "doctest.h"
#include "steerlab/errors.hpp"
#include "steerlab/intervention.hpp"
#include "steerlab/numerics.hpp"
#include "steerlab/util.hpp"

using namespace steerlab;

namespace {
Tensor randt(Rng& rng, size_t r, size_t c) {
    Tensor t(r, c);
    for (double& v : t.data) v = rng.normal();
    return t;
}

void check_close(const Tensor& a, const Tensor& b, double rel) {
    REQUIRE(a.same_shape(b));
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1e-12});
        CHECK(std::fabs(a[i] - b[i]) / denom <= rel);
    }
}

Intervention random_iv(Rng& rng, InterventionForm form, size_t d_in, size_t d_out) {
    switch (form) {
        case InterventionForm::local_weight:
            return Intervention::make_local_weight(randt(rng, d_out, d_in), randt(rng, 1, d_out));
        case InterventionForm::lora: {
            const size_t r = 1 + rng.uniform_int(std::min(d_in, d_out));
            return Intervention::make_lora(randt(rng, d_out, r), randt(rng, r, d_in));
        }
        case InterventionForm::vector: return Intervention::make_vector(randt(rng, 1, d_out));
    }
    throw argument_error("unreachable");
}
}  // namespace

TEST_CASE("apply_dynamic_update hand cases") {
    Tensor W(2, 2, {1, 0, 0, 1});
    Tensor b(1, 2, {0, 0});
    auto iv = Intervention::make_local_weight(Tensor(2, 2, {0, 1, 0, 0}), Tensor(1, 2, {1, 1}));
    auto [W2, b2] = apply_dynamic_update(W, b, iv, SteerScale(1.0, 2.0));
    CHECK(W2.data == std::vector<double>{1, 1, 0, 1});
    CHECK(b2.data == std::vector<double>{2, 2});

    // zero scale leaves the map untouched
    auto [W0, b0] = apply_dynamic_update(W, b, iv, SteerScale(0.0));
    CHECK(W0.data == W.data);
    CHECK(b0.data == b.data);

    // rank-1 LoRA product
    auto lora = Intervention::make_lora(Tensor(2, 1, {1, 0}), Tensor(1, 2, {0, 1}));
    auto [Wl, bl] = apply_dynamic_update(W, b, lora, SteerScale(1.0, 0.0));
    CHECK(Wl.data == std::vector<double>{1, 1, 0, 1});
    CHECK(bl.data == b.data);
}

TEST_CASE("activation_impact hand cases") {
    auto lora = Intervention::make_lora(Tensor(2, 1, {1, 0}), Tensor(1, 2, {0, 1}));
    Tensor h(1, 2, {3, 4});
    Tensor d1 = activation_impact(lora, h, SteerScale(2.0, 0.0));
    CHECK(d1.data == std::vector<double>{8, 0});

    auto vec = Intervention::make_vector(Tensor(1, 2, {1, -1}));
    Tensor d2 = activation_impact(vec, h, SteerScale(0.0, 3.0));
    CHECK(d2.data == std::vector<double>{3, -3});

    auto lw = Intervention::make_local_weight(Tensor(2, 2, {1, 0, 0, 1}), Tensor(1, 2, {0, 0}));
    Tensor d3 = activation_impact(lw, Tensor(1, 2, {1, 0}), SteerScale(2.0, 1.0));
    CHECK(d3.data == std::vector<double>{2, 0});
}

TEST_CASE("param_count matches the closed forms") {
    Rng rng(1);
    auto lw = random_iv(rng, InterventionForm::local_weight, 8, 8);
    CHECK(param_count(lw) == 72);  // 8*8 + 8
    auto lora = Intervention::make_lora(randt(rng, 8, 2), randt(rng, 2, 8));
    CHECK(param_count(lora) == 32);  // 8*2 + 2*8
    auto vec = random_iv(rng, InterventionForm::vector, 8, 8);
    CHECK(param_count(vec) == 8);

    // low-rank always wins when r < d_in*d_out/(d_in+d_out)
    for (size_t r = 1; r <= 8; ++r) {
        auto l = Intervention::make_lora(randt(rng, 8, r), randt(rng, r, 8));
        CHECK(param_count(l) == 16 * r);
        if (r < 4) CHECK(param_count(l) < param_count(lw));
    }
}

TEST_CASE("canonical_form reduces every form to local_weight and is idempotent") {
    Rng rng(2);
    auto vec = Intervention::make_vector(Tensor(1, 3, {1, 2, 3}));
    auto cvec = canonical_form(vec);
    CHECK(cvec.form == InterventionForm::local_weight);
    CHECK(cvec.dW.size() == 0);
    CHECK(cvec.db.data == vec.db.data);

    auto lora = random_iv(rng, InterventionForm::lora, 4, 3);
    auto clora = canonical_form(lora);
    CHECK(clora.form == InterventionForm::local_weight);
    CHECK(clora.dW.rows == 3);
    CHECK(clora.dW.cols == 4);
    for (double v : clora.db.data) CHECK(v == 0.0);

    auto twice = canonical_form(clora);
    CHECK(twice.dW.data == clora.dW.data);
    CHECK(twice.db.data == clora.db.data);
}

TEST_CASE("unified-form equivalence: weight application equals base plus impact") {
    // affine_apply(apply_dynamic_update(W,b,iv,s), h) ==
    //   affine_apply(W,h,b) + activation_impact(iv,h,s)   (within 1e-9 relative)
    Rng rng(77);
    const InterventionForm forms[] = {InterventionForm::local_weight, InterventionForm::lora,
                                      InterventionForm::vector};
    for (int trial = 0; trial < 100; ++trial) {
        const size_t d_in = 2 + rng.uniform_int(6);
        const size_t d_out = 2 + rng.uniform_int(6);
        Tensor W = randt(rng, d_out, d_in);
        Tensor b = randt(rng, 1, d_out);
        Tensor h = randt(rng, 1, d_in);
        const SteerScale s(3.0 * rng.normal(), 3.0 * rng.normal());
        for (InterventionForm f : forms) {
            const Intervention iv = random_iv(rng, f, d_in, d_out);
            auto [W2, b2] = apply_dynamic_update(W, b, iv, s);
            Tensor lhs = affine_apply(W2, h, b2);
            Tensor rhs = affine_apply(W, h, b);
            add_inplace(rhs, activation_impact(iv, h, s));
            check_close(lhs, rhs, 1e-9);
        }
    }
}

TEST_CASE("activation_impact is linear in the scale") {
    Rng rng(5);
    for (InterventionForm f : {InterventionForm::local_weight, InterventionForm::lora,
                               InterventionForm::vector}) {
        const Intervention iv = random_iv(rng, f, 5, 4);
        Tensor h = randt(rng, 1, 5);
        const double a = 2.75;
        Tensor base = activation_impact(iv, h, SteerScale(1.3, -0.4));
        Tensor scaled = activation_impact(iv, h, SteerScale(a * 1.3, a * -0.4));
        scale_inplace(base, a);
        check_close(scaled, base, 1e-12);
    }
}

TEST_CASE("canonical_form preserves application and impact") {
    Rng rng(6);
    for (InterventionForm f : {InterventionForm::local_weight, InterventionForm::lora,
                               InterventionForm::vector}) {
        const Intervention iv = random_iv(rng, f, 6, 3);
        const Intervention c = canonical_form(iv);
        Tensor W = randt(rng, 3, 6), b = randt(rng, 1, 3), h = randt(rng, 1, 6);
        const SteerScale s(0.7, -1.1);
        auto [W1, b1] = apply_dynamic_update(W, b, iv, s);
        auto [W2, b2] = apply_dynamic_update(W, b, c, s);
        check_close(W1, W2, 1e-12);
        check_close(b1, b2, 1e-12);
        check_close(activation_impact(iv, h, s), activation_impact(c, h, s), 1e-12);
    }
}

TEST_CASE("shape validation raises dimension errors") {
    Rng rng(7);
    Tensor W = randt(rng, 3, 4), b = randt(rng, 1, 3), h = randt(rng, 1, 4);
    auto wrong = random_iv(rng, InterventionForm::local_weight, 5, 3);
    CHECK_THROWS_AS(apply_dynamic_update(W, b, wrong, SteerScale(1.0)), dim_error);
    CHECK_THROWS_AS(activation_impact(wrong, h, SteerScale(1.0)), dim_error);
    CHECK_THROWS_AS(Intervention::make_lora(randt(rng, 3, 4), randt(rng, 4, 3)), dim_error);
    CHECK_THROWS_AS(
        Intervention::make_local_weight(randt(rng, 3, 4), randt(rng, 1, 5)), dim_error);
}
