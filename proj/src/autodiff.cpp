#include "ehcama/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <memory>
#include <sstream>
#include <utility>

namespace ehcama::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

MatMap as_matrix(Tensor &t) {
    return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

ConstMatMap as_matrix(const Tensor &t) {
    return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

void require_same_tape(Var a, Var b) {
    if (a.tape() != b.tape() || a.tape() == nullptr) {
        throw ContractViolation("operands recorded on different tapes");
    }
}

void require_same_shape(const char *op, Var a, Var b) {
    if (!a.value().same_shape(b.value())) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                             b.value().shape_string());
    }
}

// derivative(x, y) receives the input and the output of the forward map.
template <typename Fwd, typename Deriv>
Var unary_map(Var x, Fwd forward, Deriv derivative) {
    const Tensor &in = x.value();
    Tensor out(in.rows(), in.cols());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
    const std::size_t xid = x.id();
    Tape &tape = *x.tape();
    return tape.record(std::move(out), x.requires_grad(), [xid, derivative](Tape &t, std::size_t self) {
        const Tensor &xin = t.value(xid);
        const Tensor &y = t.value(self);
        const Tensor &g = t.grad(self);
        Tensor &gx = t.grad(xid);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xin[i], y[i]);
    });
}

} // namespace

// ---- Tensor --------------------------------------------------------------

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape [" +
                             std::to_string(rows) + "x" + std::to_string(cols) + "]");
    }
}

Tensor Tensor::row(std::initializer_list<double> values) { return Tensor(1, values.size(), std::vector<double>(values)); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto &row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(data));
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[' << rows_ << 'x' << cols_ << ']';
    return os.str();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// ---- Var / Tape ----------------------------------------------------------

const Tensor &Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::input(Tensor value, bool requires_grad) { return record(std::move(value), requires_grad, nullptr); }

Var Tape::parameter(Parameter &param, Binding binding) {
    const bool grad = param.requires_grad && binding == Binding::trainable;
    Var v = record(param.value, grad, nullptr);
    if (grad) nodes_[v.id()].param = &param;
    return v;
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(backward), nullptr});
    return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw ContractViolation("backward: loss belongs to another tape");
    const Tensor &l = loss.value();
    if (l.rows() != 1 || l.cols() != 1) {
        throw ContractViolation("backward: loss must be scalar, got " + l.shape_string());
    }
    if (!nodes_[loss.id()].requires_grad) return;

    for (std::size_t i = 0; i <= loss.id(); ++i) {
        Node &n = nodes_[i];
        if (n.requires_grad) {
            n.grad = Tensor(n.value.rows(), n.value.cols());
        } else {
            n.grad = Tensor{};
        }
    }
    nodes_[loss.id()].grad[0] = 1.0;

    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node &n = nodes_[i];
        if (n.requires_grad && n.backward) n.backward(*this, i);
    }
    for (std::size_t i = 0; i <= loss.id(); ++i) {
        Node &n = nodes_[i];
        if (n.param == nullptr) continue;
        if (!n.param->grad) {
            n.param->grad = n.grad;
        } else {
            auto &acc = *n.param->grad;
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += n.grad[k];
        }
    }
}

// ---- primitives ----------------------------------------------------------

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor &av = a.value();
    const Tensor &bv = b.value();
    if (av.cols() != bv.rows()) {
        throw DimensionError("matmul: inner dimensions differ, " + av.shape_string() + " x " + bv.shape_string());
    }
    Tensor out(av.rows(), bv.cols());
    as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
    const std::size_t aid = a.id();
    const std::size_t bid = b.id();
    return a.tape()->record(std::move(out), a.requires_grad() || b.requires_grad(),
                            [aid, bid](Tape &t, std::size_t self) {
                                auto g = as_matrix(std::as_const(t.grad(self)));
                                if (t.requires_grad(aid)) {
                                    as_matrix(t.grad(aid)).noalias() += g * as_matrix(t.value(bid)).transpose();
                                }
                                if (t.requires_grad(bid)) {
                                    as_matrix(t.grad(bid)).noalias() += as_matrix(t.value(aid)).transpose() * g;
                                }
                            });
}

Var add(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape("add", a, b);
    Tensor out = a.value();
    const Tensor &bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const std::size_t aid = a.id();
    const std::size_t bid = b.id();
    return a.tape()->record(std::move(out), a.requires_grad() || b.requires_grad(),
                            [aid, bid](Tape &t, std::size_t self) {
                                const Tensor &g = t.grad(self);
                                for (std::size_t id : {aid, bid}) {
                                    if (!t.requires_grad(id)) continue;
                                    Tensor &gi = t.grad(id);
                                    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                                }
                            });
}

Var sub(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape("sub", a, b);
    Tensor out = a.value();
    const Tensor &bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    const std::size_t aid = a.id();
    const std::size_t bid = b.id();
    return a.tape()->record(std::move(out), a.requires_grad() || b.requires_grad(),
                            [aid, bid](Tape &t, std::size_t self) {
                                const Tensor &g = t.grad(self);
                                if (t.requires_grad(aid)) {
                                    Tensor &ga = t.grad(aid);
                                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                }
                                if (t.requires_grad(bid)) {
                                    Tensor &gb = t.grad(bid);
                                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                                }
                            });
}

Var mul(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape("mul", a, b);
    Tensor out = a.value();
    const Tensor &bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const std::size_t aid = a.id();
    const std::size_t bid = b.id();
    return a.tape()->record(std::move(out), a.requires_grad() || b.requires_grad(),
                            [aid, bid](Tape &t, std::size_t self) {
                                const Tensor &g = t.grad(self);
                                if (t.requires_grad(aid)) {
                                    Tensor &ga = t.grad(aid);
                                    const Tensor &bv = t.value(bid);
                                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                                }
                                if (t.requires_grad(bid)) {
                                    Tensor &gb = t.grad(bid);
                                    const Tensor &av = t.value(aid);
                                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                                }
                            });
}

Var scale(Var a, double s) {
    return unary_map(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
    return unary_map(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_bias(Var x, Var bias) {
    require_same_tape(x, bias);
    const Tensor &xv = x.value();
    const Tensor &bv = bias.value();
    if (bv.rows() != 1 || bv.cols() != xv.cols()) {
        throw DimensionError("add_bias: bias " + bv.shape_string() + " does not fit " + xv.shape_string());
    }
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
    }
    const std::size_t xid = x.id();
    const std::size_t bid = bias.id();
    return x.tape()->record(std::move(out), x.requires_grad() || bias.requires_grad(),
                            [xid, bid](Tape &t, std::size_t self) {
                                const Tensor &g = t.grad(self);
                                if (t.requires_grad(xid)) {
                                    Tensor &gx = t.grad(xid);
                                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                                }
                                if (t.requires_grad(bid)) {
                                    Tensor &gb = t.grad(bid);
                                    for (std::size_t r = 0; r < g.rows(); ++r) {
                                        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
                                    }
                                }
                            });
}

Var tanh(Var x) {
    return unary_map(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
    return unary_map(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var x) {
    return unary_map(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
    return unary_map(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var square(Var x) {
    return unary_map(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var clamp(Var x, double lo, double hi) {
    return unary_map(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var minimum(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape("minimum", a, b);
    const Tensor &av = a.value();
    const Tensor &bv = b.value();
    Tensor out(av.rows(), av.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(av[i], bv[i]);
    const std::size_t aid = a.id();
    const std::size_t bid = b.id();
    // Ties route the gradient to the first operand.
    return a.tape()->record(std::move(out), a.requires_grad() || b.requires_grad(),
                            [aid, bid](Tape &t, std::size_t self) {
                                const Tensor &g = t.grad(self);
                                const Tensor &av = t.value(aid);
                                const Tensor &bv = t.value(bid);
                                const bool ga = t.requires_grad(aid);
                                const bool gb = t.requires_grad(bid);
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                    if (av[i] <= bv[i]) {
                                        if (ga) t.grad(aid)[i] += g[i];
                                    } else if (gb) {
                                        t.grad(bid)[i] += g[i];
                                    }
                                }
                            });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
    Tape *tape = parts.front().tape();
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    bool grad = false;
    std::vector<std::size_t> ids;
    for (const Var &p : parts) {
        if (p.tape() != tape) throw ContractViolation("concat_cols: operands recorded on different tapes");
        if (p.rows() != rows) {
            throw DimensionError("concat_cols: row mismatch " + parts.front().value().shape_string() + " vs " +
                                 p.value().shape_string());
        }
        cols += p.cols();
        grad = grad || p.requires_grad();
        ids.push_back(p.id());
    }
    Tensor out(rows, cols);
    std::size_t offset = 0;
    for (const Var &p : parts) {
        const Tensor &v = p.value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(&v.data()[r * v.cols()], v.cols(), &out.data()[r * cols + offset]);
        }
        offset += v.cols();
    }
    return tape->record(std::move(out), grad, [ids](Tape &t, std::size_t self) {
        const Tensor &g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t id : ids) {
            const std::size_t c = t.value(id).cols();
            if (t.requires_grad(id)) {
                Tensor &gi = t.grad(id);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t k = 0; k < c; ++k) gi(r, k) += g(r, offset + k);
                }
            }
            offset += c;
        }
    });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
    const Tensor &xv = x.value();
    if (start + count > xv.cols()) {
        throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                             ") out of range for " + xv.shape_string());
    }
    Tensor out(xv.rows(), count);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        std::copy_n(&xv.data()[r * xv.cols() + start], count, &out.data()[r * count]);
    }
    const std::size_t xid = x.id();
    return x.tape()->record(std::move(out), x.requires_grad(), [xid, start](Tape &t, std::size_t self) {
        const Tensor &g = t.grad(self);
        Tensor &gx = t.grad(xid);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t k = 0; k < g.cols(); ++k) gx(r, start + k) += g(r, k);
        }
    });
}

Var row_sum(Var x) {
    const Tensor &xv = x.value();
    Tensor out(xv.rows(), 1);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < xv.cols(); ++c) s += xv(r, c);
        out[r] = s;
    }
    const std::size_t xid = x.id();
    return x.tape()->record(std::move(out), x.requires_grad(), [xid](Tape &t, std::size_t self) {
        const Tensor &g = t.grad(self);
        Tensor &gx = t.grad(xid);
        for (std::size_t r = 0; r < gx.rows(); ++r) {
            for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g[r];
        }
    });
}

Var sum(Var x) {
    const Tensor &xv = x.value();
    double s = 0.0;
    for (double v : xv.data()) s += v;
    const std::size_t xid = x.id();
    return x.tape()->record(Tensor(1, 1, s), x.requires_grad(), [xid](Tape &t, std::size_t self) {
        const double g = t.grad(self)[0];
        Tensor &gx = t.grad(xid);
        for (double &v : gx.data()) v += g;
    });
}

Var mean(Var x) {
    const std::size_t n = x.value().size();
    if (n == 0) throw DimensionError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(n));
}

MaskedSoftmax masked_softmax(Var logits, std::span<const std::uint8_t> mask) {
    const Tensor &z = logits.value();
    if (mask.size() != z.size()) {
        throw DimensionError("masked_softmax: mask length " + std::to_string(mask.size()) + " does not match " +
                             z.shape_string());
    }
    Tensor out(z.rows(), z.cols());
    std::vector<bool> empty(z.rows(), false);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < z.cols(); ++c) {
            if (mask[r * z.cols() + c]) peak = std::max(peak, z(r, c));
        }
        if (peak == -std::numeric_limits<double>::infinity()) {
            empty[r] = true;
            continue;
        }
        double total = 0.0;
        for (std::size_t c = 0; c < z.cols(); ++c) {
            if (!mask[r * z.cols() + c]) continue;
            out(r, c) = std::exp(z(r, c) - peak);
            total += out(r, c);
        }
        for (std::size_t c = 0; c < z.cols(); ++c) out(r, c) /= total;
    }
    const std::size_t zid = logits.id();
    Var probs = logits.tape()->record(std::move(out), logits.requires_grad(), [zid](Tape &t, std::size_t self) {
        const Tensor &p = t.value(self);
        const Tensor &g = t.grad(self);
        Tensor &gz = t.grad(zid);
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < p.cols(); ++c) dot += p(r, c) * g(r, c);
            for (std::size_t c = 0; c < p.cols(); ++c) gz(r, c) += p(r, c) * (g(r, c) - dot);
        }
    });
    return {probs, std::move(empty)};
}

Var attend(Var queries, Var keys, Var values, std::span<const std::uint8_t> mask, std::size_t batch,
           std::size_t heads) {
    require_same_tape(queries, keys);
    require_same_tape(queries, values);
    const Tensor &q = queries.value();
    const Tensor &k = keys.value();
    const Tensor &v = values.value();
    if (batch == 0 || heads == 0) throw ContractViolation("attend: batch and heads must be positive");
    if (!k.same_shape(v)) throw DimensionError("attend: keys " + k.shape_string() + " vs values " + v.shape_string());
    if (q.cols() != k.cols() || q.cols() % heads != 0) {
        throw DimensionError("attend: queries " + q.shape_string() + " incompatible with keys " + k.shape_string() +
                             " and " + std::to_string(heads) + " heads");
    }
    if (q.rows() % batch != 0 || k.rows() % batch != 0) {
        throw DimensionError("attend: row counts not divisible by batch " + std::to_string(batch));
    }
    const std::size_t nq = q.rows() / batch;
    const std::size_t nk = k.rows() / batch;
    const std::size_t width = q.cols();
    const std::size_t hd = width / heads;
    if (mask.size() != batch * nq * nk) {
        throw DimensionError("attend: mask length " + std::to_string(mask.size()) + ", expected " +
                             std::to_string(batch * nq * nk));
    }

    // weights layout: [b][i][h][j]
    auto weights = std::make_shared<std::vector<double>>(batch * nq * heads * nk, 0.0);
    Tensor out(q.rows(), width);
    std::vector<double> logits(nk);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < nq; ++i) {
            const std::size_t qi = b * nq + i;
            const std::uint8_t *row_mask = &mask[(b * nq + i) * nk];
            for (std::size_t h = 0; h < heads; ++h) {
                const double *qh = &q.data()[qi * width + h * hd];
                double peak = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < nk; ++j) {
                    if (!row_mask[j]) continue;
                    const double *kh = &k.data()[(b * nk + j) * width + h * hd];
                    double s = 0.0;
                    for (std::size_t d = 0; d < hd; ++d) s += qh[d] * kh[d];
                    logits[j] = s;
                    peak = std::max(peak, s);
                }
                if (peak == -std::numeric_limits<double>::infinity()) continue;
                double *w = &(*weights)[((qi * heads) + h) * nk];
                double total = 0.0;
                for (std::size_t j = 0; j < nk; ++j) {
                    if (!row_mask[j]) continue;
                    w[j] = std::exp(logits[j] - peak);
                    total += w[j];
                }
                double *oh = &out.data()[qi * width + h * hd];
                for (std::size_t j = 0; j < nk; ++j) {
                    if (!row_mask[j]) continue;
                    w[j] /= total;
                    const double *vh = &v.data()[(b * nk + j) * width + h * hd];
                    for (std::size_t d = 0; d < hd; ++d) oh[d] += w[j] * vh[d];
                }
            }
        }
    }

    const std::size_t qid = queries.id();
    const std::size_t kid = keys.id();
    const std::size_t vid = values.id();
    const bool grad = queries.requires_grad() || keys.requires_grad() || values.requires_grad();
    return queries.tape()->record(
        std::move(out), grad, [=](Tape &t, std::size_t self) {
            const Tensor &g = t.grad(self);
            const Tensor &qv = t.value(qid);
            const Tensor &kv = t.value(kid);
            const Tensor &vv = t.value(vid);
            Tensor *gq = t.requires_grad(qid) ? &t.grad(qid) : nullptr;
            Tensor *gk = t.requires_grad(kid) ? &t.grad(kid) : nullptr;
            Tensor *gv = t.requires_grad(vid) ? &t.grad(vid) : nullptr;
            std::vector<double> dw(nk);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t i = 0; i < nq; ++i) {
                    const std::size_t qi = b * nq + i;
                    for (std::size_t h = 0; h < heads; ++h) {
                        const double *w = &(*weights)[((qi * heads) + h) * nk];
                        const double *gh = &g.data()[qi * width + h * hd];
                        double dot = 0.0;
                        for (std::size_t j = 0; j < nk; ++j) {
                            if (w[j] == 0.0) {
                                dw[j] = 0.0;
                                continue;
                            }
                            const std::size_t kj = (b * nk + j) * width + h * hd;
                            double s = 0.0;
                            for (std::size_t d = 0; d < hd; ++d) s += gh[d] * vv[kj + d];
                            dw[j] = s;
                            dot += w[j] * s;
                            if (gv) {
                                double *gvh = &gv->data()[kj];
                                for (std::size_t d = 0; d < hd; ++d) gvh[d] += w[j] * gh[d];
                            }
                        }
                        for (std::size_t j = 0; j < nk; ++j) {
                            if (w[j] == 0.0) continue;
                            const double dl = w[j] * (dw[j] - dot);
                            const std::size_t kj = (b * nk + j) * width + h * hd;
                            const std::size_t qo = qi * width + h * hd;
                            if (gq) {
                                for (std::size_t d = 0; d < hd; ++d) gq->data()[qo + d] += dl * kv[kj + d];
                            }
                            if (gk) {
                                for (std::size_t d = 0; d < hd; ++d) gk->data()[kj + d] += dl * qv[qo + d];
                            }
                        }
                    }
                }
            }
        });
}

GaussianSample gaussian_rsample(Var mu, Var log_sigma, const Tensor &noise) {
    require_same_tape(mu, log_sigma);
    require_same_shape("gaussian_rsample", mu, log_sigma);
    if (!noise.same_shape(mu.value())) {
        throw DimensionError("gaussian_rsample: noise " + noise.shape_string() + " vs mu " + mu.value().shape_string());
    }
    Tape &tape = *mu.tape();
    Var sigma = exp(log_sigma);
    Var u = add(mu, mul(sigma, tape.constant(noise)));
    // log N(u; mu, sigma) = -0.5 z^2 - log sigma - 0.5 log(2 pi), z = (u - mu) / sigma
    Var z = mul(sub(u, mu), exp(scale(log_sigma, -1.0)));
    Var per_dim = add_scalar(sub(scale(square(z), -0.5), log_sigma), -0.5 * std::log(2.0 * std::numbers::pi));
    return {u, row_sum(per_dim)};
}

// ---- Adam ----------------------------------------------------------------

Adam::Adam(std::vector<Parameter *> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Parameter *p : params_) {
        m_.emplace_back(p->value.rows(), p->value.cols());
        v_.emplace_back(p->value.rows(), p->value.cols());
    }
}

void Adam::step() {
    for (const Parameter *p : params_) {
        if (!p->grad) throw ContractViolation("adam_step: parameter '" + p->name + "' has no gradient");
    }
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double c1 = 1.0 - std::pow(options_.beta1, t);
    const double c2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter &p = *params_[k];
        const Tensor &g = *p.grad;
        Tensor &m = m_[k];
        Tensor &v = v_[k];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
            v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p.value[i] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
        }
        p.zero_grad();
    }
}

double clip_grad_norm(std::span<Parameter *const> params, double max_norm) {
    double total = 0.0;
    for (const Parameter *p : params) {
        if (!p->grad) continue;
        for (double g : p->grad->data()) total += g * g;
    }
    const double norm = std::sqrt(total);
    if (norm > max_norm && norm > 0.0) {
        const double factor = max_norm / norm;
        for (Parameter *p : params) {
            if (!p->grad) continue;
            for (double &g : p->grad->data()) g *= factor;
        }
    }
    return norm;
}

} // namespace ehcama::ad
