#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "vaelab/errors.hpp"
#include "vaelab/mat.hpp"
#include "vaelab/rng.hpp"

namespace vaelab::num {

enum class Axis { Rows = 0, Cols = 1 };  // Rows: collapse rows -> 1xC; Cols: collapse cols -> Bx1

// Reverse-mode tape over MatT<T>. Operations append nodes in topological
// order; backward() walks them in reverse, accumulating gradients additively
// across fan-out. A tape is confined to one thread. Parameters live outside
// the tape and are attached per graph with leaf(); their gradients accumulate
// into caller-owned buffers so one SGD step can consume them directly.
template <typename T>
class TapeT {
  public:
    using Mat = MatT<T>;

    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    TapeT() = default;
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    void set_grad_enabled(bool on) { grad_enabled_ = on; }
    bool grad_enabled() const { return grad_enabled_; }

    void clear() { nodes_.clear(); }
    std::size_t num_nodes() const { return nodes_.size(); }

    // External parameter. `value` must outlive the graph; gradients accumulate
    // into `grad_accum` (same shape) when non-null and grads are enabled.
    Var leaf(const Mat& value, Mat* grad_accum) {
        if (grad_accum && !grad_accum->same_shape(value))
            throw ShapeError("leaf: grad " + grad_accum->shape_str() + " vs value " +
                             value.shape_str());
        Node n;
        n.v = &value;
        if (grad_enabled_ && grad_accum) {
            n.g = grad_accum;
            n.requires_grad = true;
            n.external_grad = true;
        }
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    // Owned value without gradient (inputs, noise draws, masks).
    Var constant(Mat v) {
        Node n;
        n.val = std::move(v);
        n.v = nullptr;  // fixed up below; deque gives stable addresses
        nodes_.push_back(std::move(n));
        nodes_.back().v = &nodes_.back().val;
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Mat& val(Var x) const { return *node(x).v; }

    const Mat& grad(Var x) const {
        const Node& n = node(x);
        if (!n.g) throw ContractError("grad: node has no gradient");
        return *n.g;
    }

    // ---- binary elementwise ----

    Var add(Var a, Var b) {
        const Mat &A = val(a), &B = val(b);
        require_same(A, B, "add");
        Mat out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.a[i] += B.a[i];
        return make(std::move(out), {a, b}, [a, b](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(a, [&](Mat& ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i];
            });
            t.accum(b, [&](Mat& gb) {
                for (std::size_t i = 0; i < g.size(); ++i) gb.a[i] += g.a[i];
            });
        });
    }

    Var sub(Var a, Var b) {
        const Mat &A = val(a), &B = val(b);
        require_same(A, B, "sub");
        Mat out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.a[i] -= B.a[i];
        return make(std::move(out), {a, b}, [a, b](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(a, [&](Mat& ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i];
            });
            t.accum(b, [&](Mat& gb) {
                for (std::size_t i = 0; i < g.size(); ++i) gb.a[i] -= g.a[i];
            });
        });
    }

    Var mul(Var a, Var b) {
        const Mat &A = val(a), &B = val(b);
        require_same(A, B, "mul");
        Mat out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.a[i] *= B.a[i];
        return make(std::move(out), {a, b}, [a, b](TapeT& t) {
            const Mat& g = t.out_grad();
            const Mat &A2 = t.val(a), &B2 = t.val(b);
            t.accum(a, [&](Mat& ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * B2.a[i];
            });
            t.accum(b, [&](Mat& gb) {
                for (std::size_t i = 0; i < g.size(); ++i) gb.a[i] += g.a[i] * A2.a[i];
            });
        });
    }

    // Elementwise max, ties resolved to the first argument.
    Var maximum(Var a, Var b) {
        const Mat &A = val(a), &B = val(b);
        require_same(A, B, "maximum");
        Mat out = A;
        auto pick_b = std::make_shared<std::vector<unsigned char>>(A.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (B.a[i] > A.a[i]) {
                out.a[i] = B.a[i];
                (*pick_b)[i] = 1;
            }
        }
        return make(std::move(out), {a, b}, [a, b, pick_b](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(a, [&](Mat& ga) {
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (!(*pick_b)[i]) ga.a[i] += g.a[i];
            });
            t.accum(b, [&](Mat& gb) {
                for (std::size_t i = 0; i < g.size(); ++i)
                    if ((*pick_b)[i]) gb.a[i] += g.a[i];
            });
        });
    }

    // max(a_ij, c); at equality the variable branch wins so gradient flows.
    Var max_const(Var a, T c) {
        const Mat& A = val(a);
        Mat out = A;
        for (auto& x : out.a) x = std::max(x, c);
        return make(std::move(out), {a}, [a, c](TapeT& t) {
            const Mat& g = t.out_grad();
            const Mat& A2 = t.val(a);
            t.accum(a, [&](Mat& ga) {
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (A2.a[i] >= c) ga.a[i] += g.a[i];
            });
        });
    }

    // ---- broadcasts ----

    // m (BxC) + r (1xC)
    Var add_rowvec(Var m, Var r) {
        const Mat &M = val(m), &R = val(r);
        if (R.rows != 1 || R.cols != M.cols)
            throw ShapeError("add_rowvec: " + M.shape_str() + " vs " + R.shape_str());
        Mat out = M;
        for (int i = 0; i < M.rows; ++i)
            for (int j = 0; j < M.cols; ++j) out(i, j) += R(0, j);
        return make(std::move(out), {m, r}, [m, r](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(m, [&](Mat& gm) {
                for (std::size_t i = 0; i < g.size(); ++i) gm.a[i] += g.a[i];
            });
            t.accum(r, [&](Mat& gr) {
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gr(0, j) += g(i, j);
            });
        });
    }

    // m (BxC) * c (Bx1), row-scaled
    Var mul_colvec(Var m, Var c) {
        const Mat &M = val(m), &C = val(c);
        if (C.cols != 1 || C.rows != M.rows)
            throw ShapeError("mul_colvec: " + M.shape_str() + " vs " + C.shape_str());
        Mat out = M;
        for (int i = 0; i < M.rows; ++i)
            for (int j = 0; j < M.cols; ++j) out(i, j) *= C(i, 0);
        return make(std::move(out), {m, c}, [m, c](TapeT& t) {
            const Mat& g = t.out_grad();
            const Mat &M2 = t.val(m), &C2 = t.val(c);
            t.accum(m, [&](Mat& gm) {
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gm(i, j) += g(i, j) * C2(i, 0);
            });
            t.accum(c, [&](Mat& gc) {
                for (int i = 0; i < g.rows; ++i) {
                    T s = 0;
                    for (int j = 0; j < g.cols; ++j) s += g(i, j) * M2(i, j);
                    gc(i, 0) += s;
                }
            });
        });
    }

    // ---- scalar-constant elementwise ----

    Var scale(Var a, T s) { return affine(a, s, T{0}); }

    Var affine(Var a, T k, T b) {
        Mat out = val(a);
        for (auto& x : out.a) x = k * x + b;
        return make(std::move(out), {a}, [a, k](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(a, [&](Mat& ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga.a[i] += k * g.a[i];
            });
        });
    }

    // ---- unary elementwise ----

    Var tanh_(Var a) {
        Mat out = val(a);
        for (auto& x : out.a) x = std::tanh(x);
        return unary_from_output(a, std::move(out),
                                 [](T y) { return T{1} - y * y; });
    }

    Var sigmoid_(Var a) {
        Mat out = val(a);
        for (auto& x : out.a) x = T{1} / (T{1} + std::exp(-x));
        return unary_from_output(a, std::move(out), [](T y) { return y * (T{1} - y); });
    }

    Var relu_(Var a) {
        Mat out = val(a);
        for (auto& x : out.a) x = std::max(x, T{0});
        return make(std::move(out), {a}, [a](TapeT& t) {
            const Mat& g = t.out_grad();
            const Mat& A = t.val(a);
            t.accum(a, [&](Mat& ga) {
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (A.a[i] > T{0}) ga.a[i] += g.a[i];
            });
        });
    }

    Var exp_(Var a) {
        Mat out = val(a);
        for (auto& x : out.a) x = std::exp(x);
        return unary_from_output(a, std::move(out), [](T y) { return y; });
    }

    Var log_(Var a) {
        const Mat& A = val(a);
        Mat out = A;
        for (auto& x : out.a) x = std::log(x);
        return make(std::move(out), {a}, [a](TapeT& t) {
            const Mat& g = t.out_grad();
            const Mat& A2 = t.val(a);
            t.accum(a, [&](Mat& ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] / A2.a[i];
            });
        });
    }

    // ---- matmul / structure ----

    Var matmul(Var a, Var b) {
        const Mat &A = val(a), &B = val(b);
        if (A.cols != B.rows)
            throw ShapeError("matmul: " + A.shape_str() + " vs " + B.shape_str());
        Mat out(A.rows, B.cols);
        matmul_into(A, B, out);
        return make(std::move(out), {a, b}, [a, b](TapeT& t) {
            const Mat& g = t.out_grad();
            const Mat &A2 = t.val(a), &B2 = t.val(b);
            t.accum(a, [&](Mat& ga) { add_matmul_bt(g, B2, ga); });
            t.accum(b, [&](Mat& gb) { add_matmul_at(A2, g, gb); });
        });
    }

    Var concat_cols(Var a, Var b) {
        const Mat &A = val(a), &B = val(b);
        if (A.rows != B.rows)
            throw ShapeError("concat_cols: " + A.shape_str() + " vs " + B.shape_str());
        Mat out(A.rows, A.cols + B.cols);
        for (int i = 0; i < A.rows; ++i) {
            for (int j = 0; j < A.cols; ++j) out(i, j) = A(i, j);
            for (int j = 0; j < B.cols; ++j) out(i, A.cols + j) = B(i, j);
        }
        const int ac = A.cols;
        return make(std::move(out), {a, b}, [a, b, ac](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(a, [&](Mat& ga) {
                for (int i = 0; i < ga.rows; ++i)
                    for (int j = 0; j < ga.cols; ++j) ga(i, j) += g(i, j);
            });
            t.accum(b, [&](Mat& gb) {
                for (int i = 0; i < gb.rows; ++i)
                    for (int j = 0; j < gb.cols; ++j) gb(i, j) += g(i, ac + j);
            });
        });
    }

    Var slice_cols(Var a, int c0, int c1) {
        const Mat& A = val(a);
        if (c0 < 0 || c1 > A.cols || c0 >= c1)
            throw ShapeError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                             ") of " + A.shape_str());
        Mat out(A.rows, c1 - c0);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out(i, j) = A(i, c0 + j);
        return make(std::move(out), {a}, [a, c0](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(a, [&](Mat& ga) {
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) ga(i, c0 + j) += g(i, j);
            });
        });
    }

    // Embedding lookup: row k of output is table row ids[k].
    Var gather_rows(Var table, std::vector<int> ids) {
        const Mat& Tb = val(table);
        for (int id : ids)
            if (id < 0 || id >= Tb.rows)
                throw ShapeError("gather_rows: id " + std::to_string(id) + " out of " +
                                 Tb.shape_str());
        Mat out(static_cast<int>(ids.size()), Tb.cols);
        for (std::size_t k = 0; k < ids.size(); ++k)
            for (int j = 0; j < Tb.cols; ++j) out(static_cast<int>(k), j) = Tb(ids[k], j);
        auto sids = std::make_shared<std::vector<int>>(std::move(ids));
        return make(std::move(out), {table}, [table, sids](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(table, [&](Mat& gt) {
                for (std::size_t k = 0; k < sids->size(); ++k)
                    for (int j = 0; j < g.cols; ++j)
                        gt((*sids)[k], j) += g(static_cast<int>(k), j);
            });
        });
    }

    // One element per row: out(i,0) = m(i, cols[i]).
    Var take_per_row(Var m, std::vector<int> cols) {
        const Mat& M = val(m);
        if (static_cast<int>(cols.size()) != M.rows)
            throw ShapeError("take_per_row: " + std::to_string(cols.size()) + " indices for " +
                             M.shape_str());
        for (int c : cols)
            if (c < 0 || c >= M.cols)
                throw ShapeError("take_per_row: col " + std::to_string(c) + " out of " +
                                 M.shape_str());
        Mat out(M.rows, 1);
        for (int i = 0; i < M.rows; ++i) out(i, 0) = M(i, cols[i]);
        auto scols = std::make_shared<std::vector<int>>(std::move(cols));
        return make(std::move(out), {m}, [m, scols](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(m, [&](Mat& gm) {
                for (int i = 0; i < g.rows; ++i) gm(i, (*scols)[i]) += g(i, 0);
            });
        });
    }

    // ---- reductions ----

    Var sum_axis(Var a, Axis axis) {
        const Mat& A = val(a);
        Mat out = axis == Axis::Rows ? Mat(1, A.cols) : Mat(A.rows, 1);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) {
                if (axis == Axis::Rows)
                    out(0, j) += A(i, j);
                else
                    out(i, 0) += A(i, j);
            }
        return make(std::move(out), {a}, [a, axis](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(a, [&](Mat& ga) {
                for (int i = 0; i < ga.rows; ++i)
                    for (int j = 0; j < ga.cols; ++j)
                        ga(i, j) += axis == Axis::Rows ? g(0, j) : g(i, 0);
            });
        });
    }

    Var mean_axis(Var a, Axis axis) {
        const Mat& A = val(a);
        const int n = axis == Axis::Rows ? A.rows : A.cols;
        return scale(sum_axis(a, axis), T{1} / static_cast<T>(n));
    }

    // Max along an axis; backward routes to the first argmax on ties.
    Var max_axis(Var a, Axis axis) {
        const Mat& A = val(a);
        const bool rows = axis == Axis::Rows;
        Mat out = rows ? Mat(1, A.cols) : Mat(A.rows, 1);
        auto arg = std::make_shared<std::vector<int>>(rows ? A.cols : A.rows, 0);
        if (rows) {
            for (int j = 0; j < A.cols; ++j) {
                T best = A(0, j);
                int bi = 0;
                for (int i = 1; i < A.rows; ++i)
                    if (A(i, j) > best) {
                        best = A(i, j);
                        bi = i;
                    }
                out(0, j) = best;
                (*arg)[j] = bi;
            }
        } else {
            for (int i = 0; i < A.rows; ++i) {
                T best = A(i, 0);
                int bj = 0;
                for (int j = 1; j < A.cols; ++j)
                    if (A(i, j) > best) {
                        best = A(i, j);
                        bj = j;
                    }
                out(i, 0) = best;
                (*arg)[i] = bj;
            }
        }
        return make(std::move(out), {a}, [a, arg, rows](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(a, [&](Mat& ga) {
                if (rows)
                    for (int j = 0; j < ga.cols; ++j) ga((*arg)[j], j) += g(0, j);
                else
                    for (int i = 0; i < ga.rows; ++i) ga(i, (*arg)[i]) += g(i, 0);
            });
        });
    }

    Var sum_all(Var a) {
        const Mat& A = val(a);
        T s = 0;
        for (const auto& x : A.a) s += x;
        return make(Mat::scalar(s), {a}, [a](TapeT& t) {
            const T g = t.out_grad().a[0];
            t.accum(a, [&](Mat& ga) {
                for (auto& x : ga.a) x += g;
            });
        });
    }

    Var mean_all(Var a) {
        const Mat& A = val(a);
        return scale(sum_all(a), T{1} / static_cast<T>(A.size()));
    }

    // ---- softmax / dropout ----

    Var log_softmax_rows(Var a) {
        const Mat& A = val(a);
        for (const auto& x : A.a)
            if (!std::isfinite(x)) throw NumericalError("log_softmax: non-finite input");
        Mat out = A;
        for (int i = 0; i < A.rows; ++i) {
            T mx = A(i, 0);
            for (int j = 1; j < A.cols; ++j) mx = std::max(mx, A(i, j));
            T se = 0;
            for (int j = 0; j < A.cols; ++j) se += std::exp(A(i, j) - mx);
            const T lse = mx + std::log(se);
            for (int j = 0; j < A.cols; ++j) out(i, j) = A(i, j) - lse;
        }
        return make(std::move(out), {a}, [a](TapeT& t) {
            const Mat& g = t.out_grad();
            const Mat& Y = *t.nodes_[t.cur_].v;
            t.accum(a, [&](Mat& ga) {
                for (int i = 0; i < g.rows; ++i) {
                    T gsum = 0;
                    for (int j = 0; j < g.cols; ++j) gsum += g(i, j);
                    for (int j = 0; j < g.cols; ++j)
                        ga(i, j) += g(i, j) - std::exp(Y(i, j)) * gsum;
                }
            });
        });
    }

    // Inverted dropout; identity when train_mode is off or p == 0. Noise comes
    // from the caller's explicit rng, never from ambient state.
    Var dropout(Var a, double p, bool train_mode, Rng& rng) {
        if (p < 0.0 || p >= 1.0)
            throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
        if (!train_mode || p == 0.0) return affine(a, T{1}, T{0});
        const Mat& A = val(a);
        auto mask = std::make_shared<std::vector<T>>(A.size());
        const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
        Mat out = A;
        for (std::size_t i = 0; i < A.size(); ++i) {
            const T m = rng.uniform() >= p ? keep_scale : T{0};
            (*mask)[i] = m;
            out.a[i] *= m;
        }
        return make(std::move(out), {a}, [a, mask](TapeT& t) {
            const Mat& g = t.out_grad();
            t.accum(a, [&](Mat& ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * (*mask)[i];
            });
        });
    }

    // ---- backward ----

    void backward(Var loss) {
        const Node& ln = node(loss);
        if (!ln.v->is_scalar())
            throw ContractError("backward: loss must be scalar, got " + ln.v->shape_str());
        if (!grad_enabled_) throw ContractError("backward: gradients are disabled");
        if (!ln.requires_grad) return;  // loss does not depend on any parameter
        // Allocate gradient buffers for intermediates.
        for (int i = 0; i <= loss.id; ++i) {
            Node& n = nodes_[i];
            if (n.requires_grad && !n.external_grad) {
                n.gown = Mat(n.v->rows, n.v->cols);
                n.g = &n.gown;
            }
        }
        nodes_[loss.id].g->a[0] = T{1};
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.back) {
                cur_ = i;
                n.back(*this);
            }
        }
    }

  private:
    struct Node {
        Mat val;
        const Mat* v = nullptr;
        Mat gown;
        Mat* g = nullptr;
        bool requires_grad = false;
        bool external_grad = false;
        std::function<void(TapeT&)> back;
    };

    std::deque<Node> nodes_;
    bool grad_enabled_ = true;
    int cur_ = -1;  // node whose backward is running

    const Node& node(Var x) const {
        if (!x.valid() || x.id >= static_cast<int>(nodes_.size()))
            throw ContractError("invalid tape variable");
        return nodes_[x.id];
    }

    static void require_same(const Mat& a, const Mat& b, const char* op) {
        if (!a.same_shape(b))
            throw ShapeError(std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
    }

    const Mat& out_grad() const { return *nodes_[cur_].g; }

    // Run `f` on a parent's gradient buffer if that parent participates.
    template <typename F>
    void accum(Var parent, F&& f) {
        Node& p = nodes_[parent.id];
        if (p.requires_grad) f(*p.g);
    }

    Var make(Mat out, std::initializer_list<Var> parents,
             std::function<void(TapeT&)> back) {
        Node n;
        n.val = std::move(out);
        bool rg = false;
        if (grad_enabled_) {
            for (Var p : parents) rg = rg || node(p).requires_grad;
        }
        n.requires_grad = rg;
        if (rg) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        nodes_.back().v = &nodes_.back().val;
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    // For ops whose derivative is a function of the output value.
    template <typename DF>
    Var unary_from_output(Var a, Mat out, DF df) {
        return make(std::move(out), {a}, [a, df](TapeT& t) {
            const Mat& g = t.out_grad();
            const Mat& Y = *t.nodes_[t.cur_].v;
            t.accum(a, [&](Mat& ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * df(Y.a[i]);
            });
        });
    }
};

using Tape = TapeT<double>;
using Var = Tape::Var;

// ---- finite-difference gradient oracle ----

struct GradCheckParam {
    std::string name;
    Mat* value;
    Mat* grad;
};

// eval(with_grad): rebuild the graph on a fresh tape and return the scalar
// loss; when with_grad, also run backward so gradients land in the param
// buffers. eval must be deterministic (fixed seeds, dropout off) -- this is
// checked by evaluating twice.
inline double grad_check(const std::function<double(bool)>& eval,
                         const std::vector<GradCheckParam>& params, double eps) {
    const double f0 = eval(false);
    if (!std::isfinite(f0)) throw NumericalError("grad_check: non-finite objective");
    if (eval(false) != f0)
        throw NumericalError("grad_check: objective is not deterministic");

    for (const auto& p : params) p.grad->set_zero();
    eval(true);
    std::vector<Mat> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(*p.grad);

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Mat& v = *params[pi].value;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double orig = v.a[i];
            v.a[i] = orig + eps;
            const double fp = eval(false);
            v.a[i] = orig - eps;
            const double fm = eval(false);
            v.a[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericalError("grad_check: non-finite objective near " + params[pi].name);
            const double numeric = (fp - fm) / (2.0 * eps);
            const double ana = analytic[pi].a[i];
            const double rel = std::abs(numeric - ana) / std::max(std::abs(ana), 1e-8);
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace vaelab::num
