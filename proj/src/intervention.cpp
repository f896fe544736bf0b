#include "steerlab/intervention.hpp"

#include <algorithm>

#include "steerlab/errors.hpp"

namespace steerlab {

std::string site_kind_name(SiteKind k) {
    return k == SiteKind::mlp_down ? "mlp_down" : "residual";
}

SiteKind site_kind_from_name(const std::string& name) {
    if (name == "mlp_down") return SiteKind::mlp_down;
    if (name == "residual") return SiteKind::residual;
    throw parse_error("unknown site kind: " + name);
}

std::string form_name(InterventionForm f) {
    switch (f) {
        case InterventionForm::local_weight: return "local_weight";
        case InterventionForm::lora: return "lora";
        case InterventionForm::vector: return "vector";
    }
    throw argument_error("unknown intervention form");
}

InterventionForm form_from_name(const std::string& name) {
    if (name == "local_weight") return InterventionForm::local_weight;
    if (name == "lora") return InterventionForm::lora;
    if (name == "vector") return InterventionForm::vector;
    throw parse_error("unknown intervention form: " + name);
}

Intervention Intervention::make_local_weight(Tensor dW, Tensor db) {
    if (db.rows != 1) throw dim_error("local_weight: db must be a row vector");
    if (dW.size() != 0 && dW.rows != db.cols)
        throw dim_error("local_weight: dW has " + std::to_string(dW.rows) +
                        " output rows but db has " + std::to_string(db.cols) + " entries");
    Intervention iv;
    iv.form = InterventionForm::local_weight;
    iv.dW = std::move(dW);
    iv.db = std::move(db);
    return iv;
}

Intervention Intervention::make_lora(Tensor B, Tensor A) {
    if (B.cols != A.rows)
        throw dim_error("lora: B is " + B.shape_str() + " but A is " + A.shape_str());
    const size_t r = B.cols;
    if (r < 1) throw dim_error("lora: rank must be at least 1");
    if (r > std::min(A.cols, B.rows))
        throw dim_error("lora: rank " + std::to_string(r) + " exceeds min(d_in, d_out)");
    Intervention iv;
    iv.form = InterventionForm::lora;
    iv.B = std::move(B);
    iv.A = std::move(A);
    return iv;
}

Intervention Intervention::make_vector(Tensor db) {
    if (db.rows != 1) throw dim_error("vector: db must be a row vector");
    Intervention iv;
    iv.form = InterventionForm::vector;
    iv.db = std::move(db);
    return iv;
}

size_t Intervention::d_in() const {
    switch (form) {
        case InterventionForm::local_weight:
            if (dW.size() == 0)
                throw argument_error("local_weight with zero dW has no fixed input width");
            return dW.cols;
        case InterventionForm::lora: return A.cols;
        case InterventionForm::vector:
            throw argument_error("a steering vector has no input dimension");
    }
    throw argument_error("unknown intervention form");
}

size_t Intervention::d_out() const {
    switch (form) {
        case InterventionForm::local_weight: return db.cols;
        case InterventionForm::lora: return B.rows;
        case InterventionForm::vector: return db.cols;
    }
    throw argument_error("unknown intervention form");
}

size_t Intervention::rank() const {
    if (form != InterventionForm::lora) throw argument_error("rank() is defined only for lora");
    return B.cols;
}

namespace {
void check_site_shapes(const Tensor& W, const Tensor& b, const Intervention& iv,
                       const char* where) {
    if (b.rows != 1 || b.cols != W.rows) throw dim_error(std::string(where) + ": W/b mismatch");
    switch (iv.form) {
        case InterventionForm::local_weight:
            if (iv.dW.size() != 0 && !iv.dW.same_shape(W))
                throw dim_error(std::string(where) + ": dW is " + iv.dW.shape_str() +
                                " but site weight is " + W.shape_str());
            if (iv.db.cols != b.cols)
                throw dim_error(std::string(where) + ": db width does not match site bias");
            break;
        case InterventionForm::lora:
            if (iv.B.rows != W.rows || iv.A.cols != W.cols)
                throw dim_error(std::string(where) + ": BA product shape does not match site");
            break;
        case InterventionForm::vector:
            if (iv.db.cols != b.cols)
                throw dim_error(std::string(where) + ": db width does not match site bias");
            break;
    }
}
}  // namespace

std::pair<Tensor, Tensor> apply_dynamic_update(const Tensor& W, const Tensor& b,
                                               const Intervention& iv, const SteerScale& s) {
    check_site_shapes(W, b, iv, "apply_dynamic_update");
    Tensor W2 = W;
    Tensor b2 = b;
    switch (iv.form) {
        case InterventionForm::local_weight:
            if (iv.dW.size() != 0) add_scaled_inplace(W2, iv.dW, s.m1);
            add_scaled_inplace(b2, iv.db, s.m2);
            break;
        case InterventionForm::lora: {
            if (s.m1 != 0.0) {
                Tensor prod(iv.B.rows, iv.A.cols);
                matmul(iv.B, iv.A, prod);
                add_scaled_inplace(W2, prod, s.m1);
            }
            break;
        }
        case InterventionForm::vector:
            add_scaled_inplace(b2, iv.db, s.m2);
            break;
    }
    return {std::move(W2), std::move(b2)};
}

Tensor activation_impact(const Intervention& iv, const Tensor& h, const SteerScale& s) {
    if (h.rows != 1) throw dim_error("activation_impact: h must be a row vector");
    switch (iv.form) {
        case InterventionForm::local_weight: {
            Tensor out(1, iv.d_out());
            if (iv.dW.size() != 0) {
                if (iv.dW.cols != h.cols)
                    throw dim_error("activation_impact: dW input width does not match h");
                matmul_nt(h, iv.dW, out);  // (dW h)^T as a row
                scale_inplace(out, s.m1);
            }
            add_scaled_inplace(out, iv.db, s.m2);
            return out;
        }
        case InterventionForm::lora: {
            if (iv.A.cols != h.cols)
                throw dim_error("activation_impact: A input width does not match h");
            Tensor t(1, iv.rank());
            matmul_nt(h, iv.A, t);  // (A h)^T
            Tensor out(1, iv.d_out());
            matmul_nt(t, iv.B, out);  // (B A h)^T
            scale_inplace(out, s.m1);
            return out;
        }
        case InterventionForm::vector: {
            Tensor out = iv.db;
            scale_inplace(out, s.m2);
            return out;
        }
    }
    throw argument_error("unknown intervention form");
}

size_t param_count(const Intervention& iv) {
    switch (iv.form) {
        case InterventionForm::local_weight: return iv.dW.size() + iv.db.size();
        case InterventionForm::lora: return iv.A.size() + iv.B.size();
        case InterventionForm::vector: return iv.db.size();
    }
    throw argument_error("unknown intervention form");
}

Intervention canonical_form(const Intervention& iv) {
    switch (iv.form) {
        case InterventionForm::local_weight: return iv;
        case InterventionForm::lora: {
            Tensor prod(iv.B.rows, iv.A.cols);
            matmul(iv.B, iv.A, prod);
            return Intervention::make_local_weight(std::move(prod), Tensor(1, iv.B.rows));
        }
        case InterventionForm::vector:
            return Intervention::make_local_weight(Tensor(), iv.db);
    }
    throw argument_error("unknown intervention form");
}

}  // namespace steerlab
