#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "steerlab/tensor.hpp"

namespace steerlab {

enum class SiteKind { mlp_down, residual };

struct SiteId {
    size_t layer = 0;
    SiteKind kind = SiteKind::residual;
    bool operator==(const SiteId&) const = default;
};

std::string site_kind_name(SiteKind k);
SiteKind site_kind_from_name(const std::string& name);

enum class InterventionForm { local_weight, lora, vector };

std::string form_name(InterventionForm f);
InterventionForm form_from_name(const std::string& name);

// Scalar scaling coefficients of a dynamic weight update: m1 multiplies the
// weight delta, m2 the bias delta.  A single sweep factor m means m1=m2=m.
struct SteerScale {
    double m1 = 0.0;
    double m2 = 0.0;
    SteerScale() = default;
    explicit SteerScale(double m) : m1(m), m2(m) {}
    SteerScale(double m1_, double m2_) : m1(m1_), m2(m2_) {}
};

// One of the three intervention forms over a d_in -> d_out affine map:
//   local_weight: full-rank delta (dW: [d_out, d_in], db: [1, d_out])
//   lora:         low-rank weight delta B*A (B: [d_out, r], A: [r, d_in])
//   vector:       bias-only steering vector (db: [1, d_out])
// Interventions are immutable values; applying one never mutates a model.
//
// A local_weight whose dW is the empty 0x0 tensor denotes an exact zero
// weight delta of whatever input width the target map has; this is how a
// bias-only vector embeds into the local-weight form without inventing an
// input dimension it does not possess.
struct Intervention {
    InterventionForm form = InterventionForm::vector;
    Tensor dW, db;  // local_weight (db also used by vector)
    Tensor B, A;    // lora

    static Intervention make_local_weight(Tensor dW, Tensor db);
    static Intervention make_lora(Tensor B, Tensor A);
    static Intervention make_vector(Tensor db);

    size_t d_in() const;
    size_t d_out() const;
    size_t rank() const;  // lora only; throws otherwise
};

// Eq.-style application to an affine map: returns (W', b') with
//   local_weight: (W + m1*dW, b + m2*db)
//   lora:         (W + m1*B*A, b)
//   vector:       (W, b + m2*db)
std::pair<Tensor, Tensor> apply_dynamic_update(const Tensor& W, const Tensor& b,
                                               const Intervention& iv, const SteerScale& s);

// The equivalent additive change to the map's output at input h (row vector):
//   local_weight: m1*dW*h + m2*db;  lora: m1*B*A*h;  vector: m2*db
Tensor activation_impact(const Intervention& iv, const Tensor& h, const SteerScale& s);

// Trainable parameter count of the form (weight-update formulation).
size_t param_count(const Intervention& iv);

// Embeds any form into the full local-weight form; application semantics are
// preserved exactly, and the embedding is idempotent.
Intervention canonical_form(const Intervention& iv);

}  // namespace steerlab
