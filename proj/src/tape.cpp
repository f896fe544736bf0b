#include "steerlab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "steerlab/errors.hpp"

namespace steerlab {

GradTape::Node& GradTape::node(Var v) {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
        throw index_error("GradTape: invalid Var");
    return nodes_[static_cast<size_t>(v.id)];
}

const GradTape::Node& GradTape::node(Var v) const {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
        throw index_error("GradTape: invalid Var");
    return nodes_[static_cast<size_t>(v.id)];
}

Var GradTape::push(Tensor value, bool needs_grad, std::function<void(GradTape&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& GradTape::val(Var v) const { return node(v).value; }

const Tensor& GradTape::grad(Var v) const {
    const Node& n = node(v);
    if (!n.needs_grad) throw argument_error("GradTape::grad: node does not track gradients");
    if (!backward_done_) throw argument_error("GradTape::grad: backward() has not run");
    return n.grad;
}

bool GradTape::needs_grad(Var v) const { return node(v).needs_grad; }

Var GradTape::leaf(Tensor value, bool needs_grad) {
    return push(std::move(value), needs_grad, nullptr);
}

Var GradTape::add(Var a, Var b) {
    check_same_shape(val(a), val(b), "tape add");
    Tensor out = val(a);
    add_inplace(out, val(b));
    const bool ng = needs_grad(a) || needs_grad(b);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, b, r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            if (t.needs_grad(a)) add_inplace(t.grad_buf(a.id), g);
            if (t.needs_grad(b)) add_inplace(t.grad_buf(b.id), g);
        };
    }
    return r;
}

Var GradTape::sub(Var a, Var b) {
    check_same_shape(val(a), val(b), "tape sub");
    Tensor out = val(a);
    add_scaled_inplace(out, val(b), -1.0);
    const bool ng = needs_grad(a) || needs_grad(b);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, b, r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            if (t.needs_grad(a)) add_inplace(t.grad_buf(a.id), g);
            if (t.needs_grad(b)) add_scaled_inplace(t.grad_buf(b.id), g, -1.0);
        };
    }
    return r;
}

Var GradTape::mul(Var a, Var b) {
    check_same_shape(val(a), val(b), "tape mul");
    Tensor out = val(a);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= val(b).data[i];
    const bool ng = needs_grad(a) || needs_grad(b);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, b, r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            if (t.needs_grad(a)) {
                Tensor& ga = t.grad_buf(a.id);
                const Tensor& bv = t.val(b);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
            }
            if (t.needs_grad(b)) {
                Tensor& gb = t.grad_buf(b.id);
                const Tensor& av = t.val(a);
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
            }
        };
    }
    return r;
}

Var GradTape::scale(Var a, double s) {
    Tensor out = val(a);
    scale_inplace(out, s);
    const bool ng = needs_grad(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, s, r](GradTape& t) {
            add_scaled_inplace(t.grad_buf(a.id), t.nodes_[r.id].grad, s);
        };
    }
    return r;
}

Var GradTape::relu(Var a) {
    Tensor out = val(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    const bool ng = needs_grad(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            const Tensor& av = t.val(a);
            Tensor& ga = t.grad_buf(a.id);
            for (size_t i = 0; i < g.data.size(); ++i)
                if (av.data[i] > 0.0) ga.data[i] += g.data[i];
        };
    }
    return r;
}

Var GradTape::matmul(Var a, Var b) {
    Tensor out(val(a).rows, val(b).cols);
    steerlab::matmul(val(a), val(b), out);
    const bool ng = needs_grad(a) || needs_grad(b);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, b, r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            if (t.needs_grad(a)) matmul_nt_acc(g, t.val(b), t.grad_buf(a.id));  // ga += g b^T
            if (t.needs_grad(b)) matmul_tn_acc(t.val(a), g, t.grad_buf(b.id));  // gb += a^T g
        };
    }
    return r;
}

Var GradTape::matmul_nt(Var a, Var b) {
    Tensor out(val(a).rows, val(b).rows);
    steerlab::matmul_nt(val(a), val(b), out);
    const bool ng = needs_grad(a) || needs_grad(b);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, b, r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            if (t.needs_grad(a)) matmul_acc(g, t.val(b), t.grad_buf(a.id));     // ga += g b
            if (t.needs_grad(b)) matmul_tn_acc(g, t.val(a), t.grad_buf(b.id));  // gb += g^T a
        };
    }
    return r;
}

Var GradTape::add_row(Var a, Var row) {
    const Tensor& av = val(a);
    const Tensor& rv = val(row);
    if (rv.rows != 1 || rv.cols != av.cols)
        throw dim_error("tape add_row: row must be 1x" + std::to_string(av.cols) + ", got " +
                        rv.shape_str());
    Tensor out = av;
    for (size_t i = 0; i < out.rows; ++i)
        for (size_t j = 0; j < out.cols; ++j) out.at(i, j) += rv[j];
    const bool ng = needs_grad(a) || needs_grad(row);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, row, r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            if (t.needs_grad(a)) add_inplace(t.grad_buf(a.id), g);
            if (t.needs_grad(row)) {
                Tensor& gr = t.grad_buf(row.id);
                for (size_t i = 0; i < g.rows; ++i)
                    for (size_t j = 0; j < g.cols; ++j) gr[j] += g.at(i, j);
            }
        };
    }
    return r;
}

Var GradTape::mask_rows(Var a, std::vector<size_t> keep) {
    const Tensor& av = val(a);
    std::vector<char> keep_flag(av.rows, 0);
    for (size_t i : keep) {
        if (i >= av.rows) throw index_error("tape mask_rows: row index out of range");
        keep_flag[i] = 1;
    }
    Tensor out(av.rows, av.cols);
    for (size_t i = 0; i < av.rows; ++i)
        if (keep_flag[i]) std::copy_n(&av.data[i * av.cols], av.cols, &out.data[i * av.cols]);
    const bool ng = needs_grad(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, keep_flag = std::move(keep_flag), r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            Tensor& ga = t.grad_buf(a.id);
            for (size_t i = 0; i < g.rows; ++i)
                if (keep_flag[i])
                    for (size_t j = 0; j < g.cols; ++j) ga.at(i, j) += g.at(i, j);
        };
    }
    return r;
}

Var GradTape::rows(Var table, std::vector<size_t> ids) {
    const Tensor& tv = val(table);
    for (size_t id : ids)
        if (id >= tv.rows) throw index_error("tape rows: row index out of range");
    Tensor out(ids.size(), tv.cols);
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(&tv.data[ids[i] * tv.cols], tv.cols, &out.data[i * tv.cols]);
    const bool ng = needs_grad(table);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [table, ids = std::move(ids), r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            Tensor& gt = t.grad_buf(table.id);
            for (size_t i = 0; i < ids.size(); ++i)
                for (size_t j = 0; j < g.cols; ++j) gt.at(ids[i], j) += g.at(i, j);
        };
    }
    return r;
}

Var GradTape::slice_cols(Var a, size_t c0, size_t c1) {
    const Tensor& av = val(a);
    if (c0 >= c1 || c1 > av.cols) throw index_error("tape slice_cols: bad column range");
    Tensor out(av.rows, c1 - c0);
    for (size_t i = 0; i < av.rows; ++i)
        std::copy_n(&av.data[i * av.cols + c0], c1 - c0, &out.data[i * out.cols]);
    const bool ng = needs_grad(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, c0, r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            Tensor& ga = t.grad_buf(a.id);
            for (size_t i = 0; i < g.rows; ++i)
                for (size_t j = 0; j < g.cols; ++j) ga.at(i, c0 + j) += g.at(i, j);
        };
    }
    return r;
}

Var GradTape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw argument_error("tape concat_cols: no parts");
    const size_t m = val(parts[0]).rows;
    size_t total = 0;
    for (Var p : parts) {
        if (val(p).rows != m) throw dim_error("tape concat_cols: row count mismatch");
        total += val(p).cols;
    }
    Tensor out(m, total);
    size_t off = 0;
    bool ng = false;
    for (Var p : parts) {
        const Tensor& pv = val(p);
        for (size_t i = 0; i < m; ++i)
            std::copy_n(&pv.data[i * pv.cols], pv.cols, &out.data[i * total + off]);
        off += pv.cols;
        ng = ng || needs_grad(p);
    }
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [parts, r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            size_t off = 0;
            for (Var p : parts) {
                const size_t w = t.val(p).cols;
                if (t.needs_grad(p)) {
                    Tensor& gp = t.grad_buf(p.id);
                    for (size_t i = 0; i < g.rows; ++i)
                        for (size_t j = 0; j < w; ++j) gp.at(i, j) += g.at(i, off + j);
                }
                off += w;
            }
        };
    }
    return r;
}

Var GradTape::layer_norm(Var a, Var gain, Var bias, double eps) {
    const Tensor& av = val(a);
    const Tensor& gv = val(gain);
    const Tensor& bv = val(bias);
    if (gv.rows != 1 || gv.cols != av.cols || bv.rows != 1 || bv.cols != av.cols)
        throw dim_error("tape layer_norm: gain/bias must be 1x" + std::to_string(av.cols));
    const size_t m = av.rows, n = av.cols;
    Tensor out(m, n);
    Tensor xhat(m, n);       // normalized input, needed in backward
    Tensor inv_std(m, 1);    // 1/sqrt(var+eps) per row
    for (size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (size_t j = 0; j < n; ++j) mean += av.at(i, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t j = 0; j < n; ++j) {
            const double d = av.at(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (size_t j = 0; j < n; ++j) {
            const double xh = (av.at(i, j) - mean) * is;
            xhat.at(i, j) = xh;
            out.at(i, j) = gv[j] * xh + bv[j];
        }
    }
    const bool ng = needs_grad(a) || needs_grad(gain) || needs_grad(bias);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, gain, bias, r, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            const Tensor& gv = t.val(gain);
            const size_t m = g.rows, n = g.cols;
            if (t.needs_grad(gain) || t.needs_grad(bias)) {
                for (size_t j = 0; j < n; ++j) {
                    double sg = 0.0, sb = 0.0;
                    for (size_t i = 0; i < m; ++i) {
                        sg += g.at(i, j) * xhat.at(i, j);
                        sb += g.at(i, j);
                    }
                    if (t.needs_grad(gain)) t.grad_buf(gain.id)[j] += sg;
                    if (t.needs_grad(bias)) t.grad_buf(bias.id)[j] += sb;
                }
            }
            if (t.needs_grad(a)) {
                Tensor& ga = t.grad_buf(a.id);
                for (size_t i = 0; i < m; ++i) {
                    // dL/dxhat = g * gain; standard layer-norm input gradient:
                    // dx = inv_std * (gh - mean(gh) - xhat * mean(gh*xhat))
                    double mean_gh = 0.0, mean_ghx = 0.0;
                    for (size_t j = 0; j < n; ++j) {
                        const double gh = g.at(i, j) * gv[j];
                        mean_gh += gh;
                        mean_ghx += gh * xhat.at(i, j);
                    }
                    mean_gh /= static_cast<double>(n);
                    mean_ghx /= static_cast<double>(n);
                    for (size_t j = 0; j < n; ++j) {
                        const double gh = g.at(i, j) * gv[j];
                        ga.at(i, j) +=
                            inv_std[i] * (gh - mean_gh - xhat.at(i, j) * mean_ghx);
                    }
                }
            }
        };
    }
    return r;
}

Var GradTape::causal_softmax(Var scores) {
    const Tensor& sv = val(scores);
    if (sv.rows != sv.cols) throw dim_error("tape causal_softmax: matrix must be square");
    const size_t T = sv.rows;
    Tensor out(T, T);
    for (size_t i = 0; i < T; ++i) {
        double mx = sv.at(i, 0);
        for (size_t j = 1; j <= i; ++j) mx = std::max(mx, sv.at(i, j));
        double denom = 0.0;
        for (size_t j = 0; j <= i; ++j) {
            const double e = std::exp(sv.at(i, j) - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (size_t j = 0; j <= i; ++j) out.at(i, j) /= denom;
        // entries above the diagonal stay exactly zero
    }
    const bool ng = needs_grad(scores);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [scores, r](GradTape& t) {
            const Tensor& g = t.nodes_[r.id].grad;
            const Tensor& p = t.nodes_[r.id].value;
            Tensor& gs = t.grad_buf(scores.id);
            const size_t T = g.rows;
            for (size_t i = 0; i < T; ++i) {
                double dotv = 0.0;
                for (size_t j = 0; j <= i; ++j) dotv += g.at(i, j) * p.at(i, j);
                for (size_t j = 0; j <= i; ++j)
                    gs.at(i, j) += p.at(i, j) * (g.at(i, j) - dotv);
            }
        };
    }
    return r;
}

Var GradTape::sum_all(Var a) {
    Tensor out(1, 1);
    out[0] = sum(val(a));
    const bool ng = needs_grad(a);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [a, r](GradTape& t) {
            const double g = t.nodes_[r.id].grad[0];
            Tensor& ga = t.grad_buf(a.id);
            for (double& v : ga.data) v += g;
        };
    }
    return r;
}

Var GradTape::cross_entropy_sum(Var logits, std::vector<size_t> row_ids,
                                std::vector<size_t> targets) {
    const Tensor& lv = val(logits);
    if (row_ids.size() != targets.size())
        throw argument_error("tape cross_entropy_sum: row/target count mismatch");
    if (row_ids.empty()) throw argument_error("tape cross_entropy_sum: no rows selected");
    const size_t V = lv.cols;
    for (size_t k = 0; k < row_ids.size(); ++k) {
        if (row_ids[k] >= lv.rows) throw index_error("tape cross_entropy_sum: row out of range");
        if (targets[k] >= V) throw index_error("tape cross_entropy_sum: target out of range");
    }
    // Save the softmax of each selected row for the backward pass.
    Tensor probs(row_ids.size(), V);
    double total = 0.0;
    for (size_t k = 0; k < row_ids.size(); ++k) {
        const double* row = &lv.data[row_ids[k] * V];
        double mx = row[0];
        for (size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (size_t j = 0; j < V; ++j) {
            const double e = std::exp(row[j] - mx);
            probs.at(k, j) = e;
            denom += e;
        }
        for (size_t j = 0; j < V; ++j) probs.at(k, j) /= denom;
        // -log softmax[target] computed in log space for stability
        total += std::log(denom) - (row[targets[k]] - mx);
    }
    Tensor out(1, 1);
    out[0] = total;
    const bool ng = needs_grad(logits);
    Var r = push(std::move(out), ng, nullptr);
    if (ng) {
        node(r).back = [logits, r, row_ids = std::move(row_ids), targets = std::move(targets),
                        probs = std::move(probs)](GradTape& t) {
            const double g = t.nodes_[r.id].grad[0];
            Tensor& gl = t.grad_buf(logits.id);
            const size_t V = gl.cols;
            for (size_t k = 0; k < row_ids.size(); ++k) {
                double* grow = &gl.data[row_ids[k] * V];
                for (size_t j = 0; j < V; ++j) grow[j] += g * probs.at(k, j);
                grow[targets[k]] -= g;
            }
        };
    }
    return r;
}

void GradTape::backward(Var out) {
    if (backward_done_) throw argument_error("GradTape::backward: already run");
    Node& o = node(out);
    if (o.value.rows != 1 || o.value.cols != 1)
        throw argument_error("GradTape::backward: output must be 1x1, got " +
                             o.value.shape_str());
    if (!o.needs_grad)
        throw argument_error("GradTape::backward: output does not depend on any tracked input");
    for (Node& n : nodes_)
        if (n.needs_grad) n.grad = Tensor(n.value.rows, n.value.cols);
    o.grad[0] = 1.0;
    for (size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.needs_grad && n.back) n.back(*this);
    }
    backward_done_ = true;
}

}  // namespace steerlab
