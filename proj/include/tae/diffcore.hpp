#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tae/common.hpp"
#include "tae/tensor.hpp"

namespace tae {

// Handle into a Tape. Cheap to copy; only meaningful together with the tape
// that produced it.
struct Value {
    int idx = -1;
};

// Define-by-run reverse-mode tape. Nodes are appended in creation order,
// which is already a topological order, so backward is a single reverse
// sweep. One tape per training step; single-owner, not thread-shareable.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- node access ---------------------------------------------------

    const Tensor& val(Value v) const { return node(v).value; }
    const Tensor& grad(Value v) const { return node(v).grad; }
    bool requires_grad(Value v) const { return node(v).requires_grad; }
    size_t size() const { return nodes_.size(); }

    Value input(Tensor t, bool requires_grad) {
        if (!t.all_finite()) throw NumericError("tape input contains non-finite values");
        return push(std::move(t), requires_grad, {});
    }

    Value constant(Tensor t) { return input(std::move(t), false); }

    // --- elementwise ---------------------------------------------------

    Value add(Value a, Value b) {
        require_same_shape(val(a), val(b), "add");
        Tensor out = val(a);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += val(b).data[i];
        return push(std::move(out), needs(a, b), [this, a, b](const Tensor& g) {
            accumulate(a, g.data.data());
            accumulate(b, g.data.data());
        });
    }

    Value sub(Value a, Value b) {
        require_same_shape(val(a), val(b), "sub");
        Tensor out = val(a);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= val(b).data[i];
        return push(std::move(out), needs(a, b), [this, a, b](const Tensor& g) {
            accumulate(a, g.data.data());
            if (node(b).requires_grad) {
                Tensor& gb = node(b).grad;
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
            }
        });
    }

    Value mul(Value a, Value b) {
        require_same_shape(val(a), val(b), "mul");
        Tensor out = val(a);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= val(b).data[i];
        return push(std::move(out), needs(a, b), [this, a, b](const Tensor& g) {
            if (node(a).requires_grad) {
                Tensor& ga = node(a).grad;
                const Tensor& vb = val(b);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * vb.data[i];
            }
            if (node(b).requires_grad) {
                Tensor& gb = node(b).grad;
                const Tensor& va = val(a);
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * va.data[i];
            }
        });
    }

    Value scale(Value a, double c) {
        Tensor out = val(a);
        for (double& v : out.data) v *= c;
        return push(std::move(out), needs(a), [this, a, c](const Tensor& g) {
            if (!node(a).requires_grad) return;
            Tensor& ga = node(a).grad;
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * c;
        });
    }

    Value add_scalar(Value a, double c) {
        Tensor out = val(a);
        for (double& v : out.data) v += c;
        return push(std::move(out), needs(a), [this, a](const Tensor& g) { accumulate(a, g.data.data()); });
    }

    Value relu(Value a) {
        Tensor out = val(a);
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return push(std::move(out), needs(a), [this, a](const Tensor& g) {
            if (!node(a).requires_grad) return;
            Tensor& ga = node(a).grad;
            const Tensor& va = val(a);
            for (size_t i = 0; i < g.data.size(); ++i)
                if (va.data[i] > 0.0) ga.data[i] += g.data[i];
        });
    }

    Value exp(Value a) {
        Tensor out = val(a);
        for (double& v : out.data) v = std::exp(v);
        const int self = static_cast<int>(nodes_.size());
        return push(std::move(out), needs(a), [this, a, self](const Tensor& g) {
            if (!node(a).requires_grad) return;
            Tensor& ga = node(a).grad;
            const Tensor& vo = nodes_[static_cast<size_t>(self)].value;
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * vo.data[i];
        });
    }

    Value log(Value a) {
        Tensor out = val(a);
        for (double& v : out.data) {
            if (!(v > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v));
            v = std::log(v);
        }
        return push(std::move(out), needs(a), [this, a](const Tensor& g) {
            if (!node(a).requires_grad) return;
            Tensor& ga = node(a).grad;
            const Tensor& va = val(a);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] / va.data[i];
        });
    }

    // Gradient passes only strictly inside (lo, hi); the kink itself blocks.
    Value clamp(Value a, double lo, double hi) {
        if (!(lo < hi)) throw ContractError("clamp: lo must be < hi");
        Tensor out = val(a);
        for (double& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
        return push(std::move(out), needs(a), [this, a, lo, hi](const Tensor& g) {
            if (!node(a).requires_grad) return;
            Tensor& ga = node(a).grad;
            const Tensor& va = val(a);
            for (size_t i = 0; i < g.data.size(); ++i)
                if (va.data[i] > lo && va.data[i] < hi) ga.data[i] += g.data[i];
        });
    }

    // --- reductions ----------------------------------------------------

    Value sum(Value a) {
        double s = 0.0;
        for (double v : val(a).data) s += v;
        return push(Tensor::scalar(s), needs(a), [this, a](const Tensor& g) {
            if (!node(a).requires_grad) return;
            Tensor& ga = node(a).grad;
            for (double& v : ga.data) v += g.data[0];
        });
    }

    Value mean(Value a) {
        const double n = static_cast<double>(val(a).numel());
        double s = 0.0;
        for (double v : val(a).data) s += v;
        return push(Tensor::scalar(s / n), needs(a), [this, a, n](const Tensor& g) {
            if (!node(a).requires_grad) return;
            Tensor& ga = node(a).grad;
            const double gn = g.data[0] / n;
            for (double& v : ga.data) v += gn;
        });
    }

    // --- shape ops -------------------------------------------------------

    Value reshape(Value a, Shape s) {
        if (shape_numel(s) != val(a).numel())
            throw ShapeError("reshape: cannot view " + shape_str(val(a).shape) + " as " + shape_str(s));
        Tensor out = val(a);
        out.shape = std::move(s);
        return push(std::move(out), needs(a), [this, a](const Tensor& g) { accumulate(a, g.data.data()); });
    }

    // numpy-style broadcast: the source shape is left-padded with 1s, then
    // every axis must match the target or be 1. Backward sums over the
    // expanded axes.
    Value broadcast(Value a, const Shape& target) {
        const Shape& src = val(a).shape;
        if (src.size() > target.size())
            throw ShapeError("broadcast: source rank exceeds target, " + shape_str(src) + " vs " + shape_str(target));
        Shape padded(target.size(), 1);
        std::copy(src.begin(), src.end(), padded.end() - static_cast<long>(src.size()));
        for (size_t d = 0; d < target.size(); ++d)
            if (padded[d] != target[d] && padded[d] != 1)
                throw ShapeError("broadcast: " + shape_str(src) + " does not expand to " + shape_str(target));

        Tensor out(target);
        const size_t rank = target.size();
        std::vector<size_t> src_stride(rank, 0);
        size_t acc = 1;
        for (size_t d = rank; d-- > 0;) {
            src_stride[d] = padded[d] == 1 ? 0 : acc;
            acc *= static_cast<size_t>(padded[d]);
        }
        std::vector<int> idx(rank, 0);
        for (size_t o = 0; o < out.data.size(); ++o) {
            size_t si = 0;
            for (size_t d = 0; d < rank; ++d) si += src_stride[d] * static_cast<size_t>(idx[d]);
            out.data[o] = val(a).data[si];
            for (size_t d = rank; d-- > 0;) {
                if (++idx[d] < target[d]) break;
                idx[d] = 0;
            }
        }
        return push(std::move(out), needs(a), [this, a, padded, target, src_stride](const Tensor& g) {
            if (!node(a).requires_grad) return;
            Tensor& ga = node(a).grad;
            const size_t rank = target.size();
            std::vector<int> idx(rank, 0);
            for (size_t o = 0; o < g.data.size(); ++o) {
                size_t si = 0;
                for (size_t d = 0; d < rank; ++d) si += src_stride[d] * static_cast<size_t>(idx[d]);
                ga.data[si] += g.data[o];
                for (size_t d = rank; d-- > 0;) {
                    if (++idx[d] < target[d]) break;
                    idx[d] = 0;
                }
            }
        });
    }

    Value concat(Value a, Value b, int axis) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.ndim() != tb.ndim())
            throw ShapeError("concat: rank mismatch, " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
        const int rank = static_cast<int>(ta.ndim());
        if (axis < 0 || axis >= rank) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range");
        for (int d = 0; d < rank; ++d)
            if (d != axis && ta.dim(d) != tb.dim(d))
                throw ShapeError("concat: shapes differ off-axis, " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));

        Shape out_shape = ta.shape;
        out_shape[static_cast<size_t>(axis)] += tb.dim(axis);
        Tensor out(out_shape);

        // treat tensors as [outer, axis, inner]
        size_t outer = 1, inner = 1;
        for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(ta.dim(d));
        for (int d = axis + 1; d < rank; ++d) inner *= static_cast<size_t>(ta.dim(d));
        const size_t wa = static_cast<size_t>(ta.dim(axis)) * inner;
        const size_t wb = static_cast<size_t>(tb.dim(axis)) * inner;
        for (size_t r = 0; r < outer; ++r) {
            std::copy_n(ta.data.data() + r * wa, wa, out.data.data() + r * (wa + wb));
            std::copy_n(tb.data.data() + r * wb, wb, out.data.data() + r * (wa + wb) + wa);
        }
        return push(std::move(out), needs(a, b), [this, a, b, outer, wa, wb](const Tensor& g) {
            if (node(a).requires_grad) {
                Tensor& ga = node(a).grad;
                for (size_t r = 0; r < outer; ++r)
                    for (size_t i = 0; i < wa; ++i) ga.data[r * wa + i] += g.data[r * (wa + wb) + i];
            }
            if (node(b).requires_grad) {
                Tensor& gb = node(b).grad;
                for (size_t r = 0; r < outer; ++r)
                    for (size_t i = 0; i < wb; ++i) gb.data[r * wb + i] += g.data[r * (wa + wb) + wa + i];
            }
        });
    }

    // --- linear algebra --------------------------------------------------

    // [m,k] x [k,n] -> [m,n]
    Value matmul(Value a, Value b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.ndim() != 2 || tb.ndim() != 2 || ta.dim(1) != tb.dim(0))
            throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape) + " and " + shape_str(tb.shape));
        const int m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
        Tensor out({m, n});
        detail_gemm(ta.data.data(), tb.data.data(), out.data.data(), m, k, n, false, false);
        return push(std::move(out), needs(a, b), [this, a, b, m, k, n](const Tensor& g) {
            // dA = g·Bᵀ, dB = Aᵀ·g
            if (node(a).requires_grad)
                detail_gemm(g.data.data(), val(b).data.data(), node(a).grad.data.data(), m, n, k, false, true);
            if (node(b).requires_grad)
                detail_gemm(val(a).data.data(), g.data.data(), node(b).grad.data.data(), k, m, n, true, false);
        });
    }

    // --- convolution and pooling ------------------------------------------

    // x: [N,Cin,H,W], w: [Cout,Cin,kh,kw]; zero padding `pad`, square stride.
    // im2col per image, then one matmul per image.
    Value conv2d(Value x, Value w, int stride, int pad) { return conv2d_impl(x, w, nullptr, stride, pad); }

    // fused per-channel bias: cheaper than a separate broadcast node, which
    // would hold another activation-sized value and gradient
    Value conv2d(Value x, Value w, Value b, int stride, int pad) { return conv2d_impl(x, w, &b, stride, pad); }

private:
    Value conv2d_impl(Value x, Value w, const Value* bias, int stride, int pad) {
        const Tensor& tx = val(x);
        const Tensor& tw = val(w);
        if (tx.ndim() != 4 || tw.ndim() != 4)
            throw ShapeError("conv2d: expected [N,Cin,H,W] and [Cout,Cin,kh,kw], got " + shape_str(tx.shape) + " and " +
                             shape_str(tw.shape));
        if (tx.dim(1) != tw.dim(1))
            throw ShapeError("conv2d: channel mismatch, input " + shape_str(tx.shape) + " vs kernel " + shape_str(tw.shape));
        if (stride != 1 && stride != 2) throw ContractError("conv2d: stride must be 1 or 2");
        if (pad < 0) throw ContractError("conv2d: negative padding");

        const int n = tx.dim(0), cin = tx.dim(1), h = tx.dim(2), wd = tx.dim(3);
        const int cout = tw.dim(0), kh = tw.dim(2), kw = tw.dim(3);
        const int oh = (h + 2 * pad - kh) / stride + 1;
        const int ow = (wd + 2 * pad - kw) / stride + 1;
        if (oh < 1 || ow < 1)
            throw ShapeError("conv2d: kernel " + shape_str(tw.shape) + " larger than padded input " + shape_str(tx.shape));

        const bool has_bias = bias != nullptr;
        const Value b = has_bias ? *bias : Value{};
        if (has_bias) {
            const Tensor& tb = val(b);
            if (tb.ndim() != 1 || tb.dim(0) != cout)
                throw ShapeError("conv2d: bias must be [" + std::to_string(cout) + "], got " + shape_str(tb.shape));
        }

        const int col_rows = cin * kh * kw;
        const int col_cols = oh * ow;
        Tensor out({n, cout, oh, ow});
        std::vector<double> col(static_cast<size_t>(col_rows) * static_cast<size_t>(col_cols));
        for (int ni = 0; ni < n; ++ni) {
            double* dst = out.data.data() + static_cast<size_t>(ni) * cout * oh * ow;
            im2col(tx.data.data() + static_cast<size_t>(ni) * cin * h * wd, cin, h, wd, kh, kw, stride, pad, col.data());
            detail_gemm(tw.data.data(), col.data(), dst, cout, col_rows, col_cols, false, false, /*accumulate=*/false);
            if (has_bias)
                for (int co = 0; co < cout; ++co) {
                    const double bv = val(b).data[static_cast<size_t>(co)];
                    for (int i = 0; i < col_cols; ++i) dst[static_cast<size_t>(co) * col_cols + i] += bv;
                }
        }
        const bool rg = has_bias ? (needs(x, w) || needs(b)) : needs(x, w);
        return push(std::move(out), rg, [this, x, w, b, has_bias, n, cin, h, wd, cout, kh, kw, stride, pad, oh, ow,
                                         col_rows, col_cols](const Tensor& g) {
            // the column matrix is rebuilt per image rather than kept alive
            // for the whole batch; it dwarfs the activations it derives from
            std::vector<double> col(static_cast<size_t>(col_rows) * static_cast<size_t>(col_cols));
            std::vector<double> dcol(col.size());
            const bool need_x = node(x).requires_grad;
            const bool need_w = node(w).requires_grad;
            for (int ni = 0; ni < n; ++ni) {
                const double* gout = g.data.data() + static_cast<size_t>(ni) * cout * oh * ow;
                if (need_w) {
                    im2col(val(x).data.data() + static_cast<size_t>(ni) * cin * h * wd, cin, h, wd, kh, kw, stride, pad,
                           col.data());
                    // dW += g·colᵀ
                    detail_gemm(gout, col.data(), node(w).grad.data.data(), cout, col_cols, col_rows, false, true);
                }
                if (need_x) {
                    // dcol = Wᵀ·g, then scatter back
                    detail_gemm(val(w).data.data(), gout, dcol.data(), col_rows, cout, col_cols, true, false,
                                /*accumulate=*/false);
                    col2im(dcol.data(), cin, h, wd, kh, kw, stride, pad,
                           node(x).grad.data.data() + static_cast<size_t>(ni) * cin * h * wd);
                }
            }
            if (has_bias && node(b).requires_grad) {
                Tensor& gb = node(b).grad;
                for (int ni = 0; ni < n; ++ni)
                    for (int co = 0; co < cout; ++co) {
                        const double* gout = g.data.data() + (static_cast<size_t>(ni) * cout + co) * col_cols;
                        double s = 0.0;
                        for (int i = 0; i < col_cols; ++i) s += gout[i];
                        gb.data[static_cast<size_t>(co)] += s;
                    }
            }
        });
    }

public:

    // non-overlapping k x k average pooling; spatial dims must divide by k
    Value avgpool2d(Value a, int k) {
        const Tensor& ta = val(a);
        if (ta.ndim() != 4) throw ShapeError("avgpool2d: expected [N,C,H,W], got " + shape_str(ta.shape));
        if (k < 1) throw ContractError("avgpool2d: window must be positive");
        const int n = ta.dim(0), c = ta.dim(1), h = ta.dim(2), w = ta.dim(3);
        if (h % k != 0 || w % k != 0)
            throw ShapeError("avgpool2d: window " + std::to_string(k) + " does not divide " + shape_str(ta.shape));
        const int oh = h / k, ow = w / k;
        Tensor out({n, c, oh, ow});
        const double inv = 1.0 / (static_cast<double>(k) * static_cast<double>(k));
        for (int p = 0; p < n * c; ++p) {
            const double* src = ta.data.data() + static_cast<size_t>(p) * h * w;
            double* dst = out.data.data() + static_cast<size_t>(p) * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double s = 0.0;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) s += src[(oy * k + dy) * w + ox * k + dx];
                    dst[oy * ow + ox] = s * inv;
                }
        }
        return push(std::move(out), needs(a), [this, a, n, c, h, w, k, oh, ow, inv](const Tensor& g) {
            if (!node(a).requires_grad) return;
            Tensor& ga = node(a).grad;
            for (int p = 0; p < n * c; ++p) {
                double* dst = ga.data.data() + static_cast<size_t>(p) * h * w;
                const double* gsrc = g.data.data() + static_cast<size_t>(p) * oh * ow;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        const double gv = gsrc[oy * ow + ox] * inv;
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx) dst[(oy * k + dy) * w + ox * k + dx] += gv;
                    }
            }
        });
    }

    // row-wise log-softmax of a [n, c] matrix, stabilized by subtracting the
    // row max before exponentiating
    Value log_softmax(Value a) {
        const Tensor& ta = val(a);
        if (ta.ndim() != 2) throw ShapeError("log_softmax: expected [n, classes], got " + shape_str(ta.shape));
        const int n = ta.dim(0), c = ta.dim(1);
        Tensor out = ta;
        for (int r = 0; r < n; ++r) {
            double* row = out.data.data() + static_cast<size_t>(r) * c;
            double mx = row[0];
            for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            double lse = 0.0;
            for (int j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
            lse = mx + std::log(lse);
            for (int j = 0; j < c; ++j) row[j] -= lse;
        }
        const int self = static_cast<int>(nodes_.size());
        return push(std::move(out), needs(a), [this, a, self, n, c](const Tensor& g) {
            if (!node(a).requires_grad) return;
            // dx = g - softmax(x) * sum(g) per row
            Tensor& ga = node(a).grad;
            const Tensor& vo = nodes_[static_cast<size_t>(self)].value;
            for (int r = 0; r < n; ++r) {
                const double* grow = g.data.data() + static_cast<size_t>(r) * c;
                const double* orow = vo.data.data() + static_cast<size_t>(r) * c;
                double gsum = 0.0;
                for (int j = 0; j < c; ++j) gsum += grow[j];
                double* garow = ga.data.data() + static_cast<size_t>(r) * c;
                for (int j = 0; j < c; ++j) garow[j] += grow[j] - std::exp(orow[j]) * gsum;
            }
        });
    }

    // --- backward ---------------------------------------------------------

    // seeds d(root)/d(root) = 1 and sweeps the tape once in reverse
    void backward(Value root) {
        if (val(root).numel() != 1) throw ContractError("backward: root must be scalar, got " + shape_str(val(root).shape));
        for (Node& nd : nodes_) std::fill(nd.grad.data.begin(), nd.grad.data.end(), 0.0);
        node(root).grad.data[0] = 1.0;
        for (size_t i = static_cast<size_t>(root.idx) + 1; i-- > 0;) {
            Node& nd = nodes_[i];
            if (nd.requires_grad && nd.back) nd.back(nd.grad);
        }
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(const Tensor&)> back;  // receives this node's grad
    };

    std::vector<Node> nodes_;

    Node& node(Value v) {
        if (v.idx < 0 || static_cast<size_t>(v.idx) >= nodes_.size()) throw ContractError("value handle outside tape");
        return nodes_[static_cast<size_t>(v.idx)];
    }
    const Node& node(Value v) const {
        if (v.idx < 0 || static_cast<size_t>(v.idx) >= nodes_.size()) throw ContractError("value handle outside tape");
        return nodes_[static_cast<size_t>(v.idx)];
    }

    bool needs(Value a) const { return node(a).requires_grad; }
    bool needs(Value a, Value b) const { return node(a).requires_grad || node(b).requires_grad; }

    Value push(Tensor value, bool requires_grad, std::function<void(const Tensor&)> back) {
        Node nd;
        nd.grad = Tensor(value.shape);
        nd.value = std::move(value);
        nd.requires_grad = requires_grad;
        nd.back = requires_grad ? std::move(back) : std::function<void(const Tensor&)>{};
        nodes_.push_back(std::move(nd));
        return Value{static_cast<int>(nodes_.size()) - 1};
    }

    void accumulate(Value a, const double* g) {
        Node& nd = node(a);
        if (!nd.requires_grad) return;
        for (size_t i = 0; i < nd.grad.data.size(); ++i) nd.grad.data[i] += g[i];
    }

    // c (+)= op(a)·op(b) with optional transposes; row-major, plain loops
    static void detail_gemm(const double* a, const double* b, double* c, int m, int k, int n, bool ta, bool tb,
                            bool accumulate = true) {
        if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * static_cast<size_t>(n), 0.0);
        for (int i = 0; i < m; ++i) {
            for (int p = 0; p < k; ++p) {
                const double av = ta ? a[static_cast<size_t>(p) * m + i] : a[static_cast<size_t>(i) * k + p];
                if (av == 0.0) continue;
                const double* brow = tb ? nullptr : b + static_cast<size_t>(p) * n;
                double* crow = c + static_cast<size_t>(i) * n;
                if (tb) {
                    for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<size_t>(j) * k + p];
                } else {
                    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
            }
        }
    }

    static void im2col(const double* img, int cin, int h, int w, int kh, int kw, int stride, int pad, double* col) {
        const int oh = (h + 2 * pad - kh) / stride + 1;
        const int ow = (w + 2 * pad - kw) / stride + 1;
        size_t r = 0;
        for (int ci = 0; ci < cin; ++ci) {
            for (int dy = 0; dy < kh; ++dy) {
                for (int dx = 0; dx < kw; ++dx, ++r) {
                    double* dst = col + r * static_cast<size_t>(oh) * static_cast<size_t>(ow);
                    for (int oy = 0; oy < oh; ++oy) {
                        const int sy = oy * stride + dy - pad;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int sx = ox * stride + dx - pad;
                            *dst++ = (sy < 0 || sy >= h || sx < 0 || sx >= w)
                                         ? 0.0
                                         : img[(static_cast<size_t>(ci) * h + sy) * w + sx];
                        }
                    }
                }
            }
        }
    }

    static void col2im(const double* col, int cin, int h, int w, int kh, int kw, int stride, int pad, double* img) {
        const int oh = (h + 2 * pad - kh) / stride + 1;
        const int ow = (w + 2 * pad - kw) / stride + 1;
        size_t r = 0;
        for (int ci = 0; ci < cin; ++ci) {
            for (int dy = 0; dy < kh; ++dy) {
                for (int dx = 0; dx < kw; ++dx, ++r) {
                    const double* src = col + r * static_cast<size_t>(oh) * static_cast<size_t>(ow);
                    for (int oy = 0; oy < oh; ++oy) {
                        const int sy = oy * stride + dy - pad;
                        if (sy < 0 || sy >= h) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int sx = ox * stride + dx - pad;
                            if (sx < 0 || sx >= w) continue;
                            img[(static_cast<size_t>(ci) * h + sy) * w + sx] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
};

// --- finite-difference gradient checking ----------------------------------

struct GradcheckReport {
    double max_rel_err = 0.0;
    std::vector<double> per_input;
    bool ok(double tol = 1e-4) const { return max_rel_err < tol; }
};

// f rebuilds the graph from scratch on each call: gradcheck evaluates it
// 2·numel times with perturbed inputs and once for the analytic pass.
inline GradcheckReport gradcheck(const std::function<Value(Tape&, const std::vector<Value>&)>& f,
                                 std::vector<Tensor> inputs, double step = 1e-5) {
    auto eval = [&](const std::vector<Tensor>& xs) {
        Tape tape;
        std::vector<Value> vals;
        vals.reserve(xs.size());
        for (const Tensor& x : xs) vals.push_back(tape.input(x, true));
        Value out = f(tape, vals);
        if (tape.val(out).numel() != 1) throw ContractError("gradcheck: function must be scalar-valued");
        return tape.val(out).data[0];
    };

    // analytic gradients in one pass
    Tape tape;
    std::vector<Value> vals;
    vals.reserve(inputs.size());
    for (const Tensor& x : inputs) vals.push_back(tape.input(x, true));
    Value out = f(tape, vals);
    if (tape.val(out).numel() != 1) throw ContractError("gradcheck: function must be scalar-valued");
    tape.backward(out);

    GradcheckReport report;
    report.per_input.resize(inputs.size(), 0.0);
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t j = 0; j < inputs[i].data.size(); ++j) {
            const double keep = inputs[i].data[j];
            inputs[i].data[j] = keep + step;
            const double fp = eval(inputs);
            inputs[i].data[j] = keep - step;
            const double fm = eval(inputs);
            inputs[i].data[j] = keep;
            const double numeric = (fp - fm) / (2.0 * step);
            const double analytic = tape.grad(vals[i]).data[j];
            const double rel = std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
            report.per_input[i] = std::max(report.per_input[i], rel);
            report.max_rel_err = std::max(report.max_rel_err, rel);
        }
    }
    return report;
}

}  // namespace tae
