#pragma once

// Dense 64-bit tensors on a reverse-mode tape.
//
// Lifetime model: one Tape per training step. Ops record backward closures on
// the thread-local active tape (see TapeScope); with no active tape they are
// plain forward evaluations. Tensors are immutable while a tape that refers
// to them is alive; the optimizer mutates parameter storage only between
// tapes.
//
// Broadcast rule: shapes are right-aligned, missing leading axes count as 1,
// and axes of size 1 stretch to the other operand's extent.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tablab {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

class Tape;

namespace detail {
struct GradMeta {
    std::int64_t node = -1;
    std::uint64_t epoch = 0;
};
// Tape epochs are process-unique so node handles can never alias across
// tape instances or resets.
inline std::atomic<std::uint64_t> g_tape_epoch{0};
}  // namespace detail

class Tensor {
public:
    Tensor() : data_(std::make_shared<std::vector<double>>()) {}

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(numel(shape_), fill)) {}

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
        if (numel(shape_) != values.size())
            throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " does not hold " +
                                        std::to_string(values.size()) + " values");
        data_ = std::make_shared<std::vector<double>>(std::move(values));
    }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_->size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }
    std::vector<double>& vec() { return *data_; }
    const std::vector<double>& vec() const { return *data_; }

    double item() const {
        if (size() != 1) throw std::logic_error("Tensor::item: size " + std::to_string(size()) + " != 1");
        return (*data_)[0];
    }

    double at(std::size_t i) const { return (*data_)[i]; }

    bool requires_grad() const { return meta_ != nullptr; }

    Tensor& set_requires_grad(bool on) {
        if (on && !meta_) meta_ = std::make_shared<detail::GradMeta>();
        if (!on) meta_.reset();
        return *this;
    }

    // Deep copy of values; grad tracking not carried over.
    Tensor clone() const { return Tensor(shape_, *data_); }

    bool finite() const {
        for (double v : *data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    std::shared_ptr<detail::GradMeta> meta_;

    friend class Tape;
    friend Tape* active_tape();
    friend struct OpCtx;
};

// ---------------------------------------------------------------------------
// Tape

class Tape {
public:
    Tape() : epoch_(++detail::g_tape_epoch) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t epoch() const { return epoch_; }
    std::size_t node_count() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        grads_.clear();
        ran_backward_ = false;
        epoch_ = ++detail::g_tape_epoch;
    }

    // Accumulation buffer for node `id`, zero-initialized on first touch.
    std::vector<double>& acc(std::int64_t id, std::size_t n) {
        auto& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) g.assign(n, 0.0);
        return g;
    }

    void backward(const Tensor& loss) {
        if (ran_backward_)
            throw std::logic_error("Tape::backward: already run on this tape; reset() before the next forward");
        if (loss.size() != 1)
            throw std::invalid_argument("Tape::backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        if (!loss.meta_ || loss.meta_->epoch != epoch_ || loss.meta_->node < 0)
            throw std::logic_error("Tape::backward: loss is not on this tape (stale or untracked)");
        ran_backward_ = true;
        const std::size_t start = static_cast<std::size_t>(loss.meta_->node);
        acc(loss.meta_->node, 1)[0] = 1.0;
        for (std::size_t i = start + 1; i-- > 0;) {
            if (grads_[i].empty()) continue;
            if (nodes_[i].back) nodes_[i].back(*this, grads_[i]);
        }
    }

    bool has_grad(const Tensor& t) const {
        return t.meta_ && t.meta_->epoch == epoch_ && t.meta_->node >= 0 &&
               !grads_[static_cast<std::size_t>(t.meta_->node)].empty();
    }

    // Gradient of the last backward() w.r.t. `t`; zeros if t never
    // participated (the unreachable-tensor contract).
    std::vector<double> grad(const Tensor& t) const {
        if (has_grad(t)) return grads_[static_cast<std::size_t>(t.meta_->node)];
        return std::vector<double>(t.size(), 0.0);
    }

    const std::vector<double>* grad_if(const Tensor& t) const {
        if (has_grad(t)) return &grads_[static_cast<std::size_t>(t.meta_->node)];
        return nullptr;
    }

    std::int64_t add_node(std::function<void(Tape&, const std::vector<double>&)> back) {
        nodes_.push_back(Node{std::move(back)});
        grads_.emplace_back();
        return static_cast<std::int64_t>(nodes_.size()) - 1;
    }

private:
    struct Node {
        std::function<void(Tape&, const std::vector<double>&)> back;  // null for leaves
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    std::uint64_t epoch_;
    bool ran_backward_ = false;
};

namespace detail {
inline thread_local Tape* g_active_tape = nullptr;
}

inline Tape* active_tape() { return detail::g_active_tape; }

class TapeScope {
public:
    explicit TapeScope(Tape& t) : prev_(detail::g_active_tape) { detail::g_active_tape = &t; }
    ~TapeScope() { detail::g_active_tape = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// ---------------------------------------------------------------------------
// Op recording

struct OpCtx {
    Tape* tape = nullptr;

    // Tape node id of `t` on the active tape, registering parameters as
    // leaves on first use in this epoch. -1 when untracked.
    static std::int64_t input_id(const Tensor& t) {
        Tape* tp = active_tape();
        if (!tp || !t.meta_) return -1;
        auto& m = *t.meta_;
        if (m.epoch != tp->epoch() || m.node < 0) {
            m.node = tp->add_node(nullptr);
            m.epoch = tp->epoch();
        }
        return m.node;
    }

    static bool tracked(const Tensor& t) { return active_tape() != nullptr && t.meta_ != nullptr; }

    static void attach(Tensor& out, std::function<void(Tape&, const std::vector<double>&)> back) {
        Tape* tp = active_tape();
        out.meta_ = std::make_shared<detail::GradMeta>();
        out.meta_->node = tp->add_node(std::move(back));
        out.meta_->epoch = tp->epoch();
    }

    static std::shared_ptr<std::vector<double>> storage(const Tensor& t) { return t.data_; }
};

// ---------------------------------------------------------------------------
// Broadcast machinery

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

namespace detail {

// Element strides of `s` right-aligned into an output of shape `out`;
// stretched axes get stride 0.
inline std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
    std::vector<std::size_t> st(out.size(), 0);
    std::size_t stride = 1;
    std::size_t off = out.size() - s.size();
    for (std::size_t i = s.size(); i-- > 0;) {
        st[off + i] = (s[i] == 1 && out[off + i] != 1) ? 0 : stride;
        stride *= s[i];
    }
    return st;
}

// Apply fn over the broadcast of (a, b) into out. Fast paths cover the hot
// layouts; the odometer fallback handles the rest.
template <class F>
inline void broadcast_apply(const double* a, const Shape& as, const double* b, const Shape& bs,
                            double* out, const Shape& os, F&& fn) {
    const std::size_t n = numel(os);
    if (as == bs) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(a[i], b[i]);
        return;
    }
    if (numel(bs) == 1) {
        const double s = b[0];
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(a[i], s);
        return;
    }
    if (numel(as) == 1) {
        const double s = a[0];
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(s, b[i]);
        return;
    }
    // b is a contiguous suffix of a (e.g. [B,s,d] op [d] or [B,k,d] op [k,d])
    if (as == os && bs.size() <= as.size() &&
        std::equal(bs.begin(), bs.end(), as.end() - static_cast<std::ptrdiff_t>(bs.size()))) {
        const std::size_t m = numel(bs);
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(a[i], b[i % m]);
        return;
    }
    if (bs == os && as.size() <= bs.size() &&
        std::equal(as.begin(), as.end(), bs.end() - static_cast<std::ptrdiff_t>(as.size()))) {
        const std::size_t m = numel(as);
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(a[i % m], b[i]);
        return;
    }
    const auto sa = aligned_strides(as, os);
    const auto sb = aligned_strides(bs, os);
    std::vector<std::size_t> idx(os.size(), 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = fn(a[oa], b[ob]);
        for (std::size_t ax = os.size(); ax-- > 0;) {
            ++idx[ax];
            oa += sa[ax];
            ob += sb[ax];
            if (idx[ax] < os[ax]) break;
            idx[ax] = 0;
            oa -= sa[ax] * os[ax];
            ob -= sb[ax] * os[ax];
        }
    }
}

// Accumulate `g` (of shape gs) into `out` (of shape ts), summing over axes
// that were stretched when ts broadcast up to gs.
inline void reduce_into(const double* g, const Shape& gs, double* out, const Shape& ts) {
    if (gs == ts) {
        const std::size_t n = numel(gs);
        for (std::size_t i = 0; i < n; ++i) out[i] += g[i];
        return;
    }
    const auto st = aligned_strides(ts, gs);
    std::vector<std::size_t> idx(gs.size(), 0);
    std::size_t ot = 0;
    const std::size_t n = numel(gs);
    for (std::size_t i = 0; i < n; ++i) {
        out[ot] += g[i];
        for (std::size_t ax = gs.size(); ax-- > 0;) {
            ++idx[ax];
            ot += st[ax];
            if (idx[ax] < gs[ax]) break;
            idx[ax] = 0;
            ot -= st[ax] * gs[ax];
        }
    }
}

// dOut-side values iterated against the broadcast counterpart: helper for
// binary-op backward. Computes per-output partials into scratch and reduces.
template <class F>
inline void binary_backward_side(Tape& tape, std::int64_t id, const Shape& my_shape,
                                 const std::vector<double>& gout, const Shape& os,
                                 const double* other, const Shape& other_shape, F&& partial) {
    auto& slot = tape.acc(id, numel(my_shape));
    if (my_shape == os) {
        const auto st = aligned_strides(other_shape, os);
        std::vector<std::size_t> idx(os.size(), 0);
        std::size_t oo = 0;
        for (std::size_t i = 0; i < gout.size(); ++i) {
            slot[i] += partial(gout[i], other[oo]);
            for (std::size_t ax = os.size(); ax-- > 0;) {
                ++idx[ax];
                oo += st[ax];
                if (idx[ax] < os[ax]) break;
                idx[ax] = 0;
                oo -= st[ax] * os[ax];
            }
        }
        return;
    }
    std::vector<double> scratch(gout.size());
    broadcast_apply(gout.data(), os, other, other_shape, scratch.data(), os,
                    [&](double g, double o) { return partial(g, o); });
    reduce_into(scratch.data(), os, slot.data(), my_shape);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops

namespace detail {

template <class FwdF, class DaF, class DbF>
inline Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, FwdF fwd, DaF da, DbF db) {
    Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor out(os);
    broadcast_apply(a.data(), a.shape(), b.data(), b.shape(), out.data(), os, fwd);
    if (OpCtx::tracked(a) || OpCtx::tracked(b)) {
        std::int64_t ia = OpCtx::input_id(a), ib = OpCtx::input_id(b);
        auto ad = OpCtx::storage(a);
        auto bd = OpCtx::storage(b);
        Shape as = a.shape(), bs = b.shape();
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            if (ia >= 0) binary_backward_side(t, ia, as, g, os, bd->data(), bs, da);
            if (ib >= 0) binary_backward_side(t, ib, bs, g, os, ad->data(), as, db);
        });
    }
    (void)name;
    return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "add", [](double x, double y) { return x + y; }, [](double g, double) { return g; },
        [](double g, double) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double g, double) { return g; },
        [](double g, double) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double g, double o) { return g * o; },
        [](double g, double o) { return g * o; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    // db needs a/b^2 = (a-side value); handled by capturing both sides below.
    Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor out(os);
    detail::broadcast_apply(a.data(), a.shape(), b.data(), b.shape(), out.data(), os,
                            [](double x, double y) { return x / y; });
    if (OpCtx::tracked(a) || OpCtx::tracked(b)) {
        std::int64_t ia = OpCtx::input_id(a), ib = OpCtx::input_id(b);
        auto ad = OpCtx::storage(a);
        auto bd = OpCtx::storage(b);
        auto od = OpCtx::storage(out);
        Shape as = a.shape(), bs = b.shape();
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            if (ia >= 0)
                detail::binary_backward_side(t, ia, as, g, os, bd->data(), bs,
                                             [](double gv, double bv) { return gv / bv; });
            if (ib >= 0) {
                // dB = -g * out / b, with out broadcast-free (out has shape os)
                std::vector<double> gob(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) gob[i] = -g[i] * (*od)[i];
                detail::binary_backward_side(t, ib, bs, gob, os, bd->data(), bs,
                                             [](double gv, double bv) { return gv / bv; });
            }
        });
    }
    return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator/(const Tensor& a, double s) { return div(a, Tensor::scalar(s)); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator+(double s, const Tensor& a) { return add(a, Tensor::scalar(s)); }

// ---------------------------------------------------------------------------
// Elementwise unary ops

namespace detail {

template <class FwdF, class BwdF>
inline Tensor unary_op(const Tensor& a, FwdF fwd, BwdF make_back) {
    Tensor out(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i]);
    if (OpCtx::tracked(a)) {
        std::int64_t ia = OpCtx::input_id(a);
        auto back = make_back(OpCtx::storage(a), OpCtx::storage(out));
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            auto& slot = t.acc(ia, g.size());
            for (std::size_t i = 0; i < g.size(); ++i) slot[i] += back(g[i], i);
        });
    }
    return out;
}

}  // namespace detail

inline Tensor neg(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return -x; },
        [](auto, auto) { return [](double g, std::size_t) { return -g; }; });
}

inline Tensor operator-(const Tensor& a) { return neg(a); }

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::exp(x); },
        [](auto, auto out) {
            return [out](double g, std::size_t i) { return g * (*out)[i]; };
        });
}

inline Tensor log(const Tensor& a) {
    for (double v : a.vec())
        if (v <= 0.0) throw std::domain_error("log: non-positive input " + std::to_string(v));
    return detail::unary_op(
        a, [](double x) { return std::log(x); },
        [](auto in, auto) {
            return [in](double g, std::size_t i) { return g / (*in)[i]; };
        });
}

inline Tensor sqrt(const Tensor& a) {
    for (double v : a.vec())
        if (v < 0.0) throw std::domain_error("sqrt: negative input " + std::to_string(v));
    return detail::unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](auto, auto out) {
            return [out](double g, std::size_t i) { return 0.5 * g / (*out)[i]; };
        });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](auto in, auto) {
            // subgradient 0 at 0
            return [in](double g, std::size_t i) { return (*in)[i] > 0.0 ? g : 0.0; };
        });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a,
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](auto, auto out) {
            return [out](double g, std::size_t i) {
                double y = (*out)[i];
                return g * y * (1.0 - y);
            };
        });
}

// ---------------------------------------------------------------------------
// Matrix products

namespace detail {

// C[m x p] (+)= A[m x n] * B[n x p]
inline void mm(double* c, const double* a, const double* b, std::size_t m, std::size_t n, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * p;
        const double* arow = a + i * n;
        for (std::size_t k = 0; k < n; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = b + k * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x p] += A[m x n] * B^T where B is [p x n]
inline void mm_abt(double* c, const double* a, const double* b, std::size_t m, std::size_t n, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        double* crow = c + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            const double* brow = b + j * n;
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += arow[k] * brow[k];
            crow[j] += s;
        }
    }
}

// C[n x p] += A^T * B where A is [m x n], B is [m x p]
inline void mm_atb(double* c, const double* a, const double* b, std::size_t m, std::size_t n, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        const double* brow = b + i * p;
        for (std::size_t k = 0; k < n; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            double* crow = c + k * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

// a: [..., m, n]; b: [n, p] (stacked) or [..., n, p] with identical leading
// dims (batched). Returns [..., m, p].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw std::invalid_argument("matmul: need rank >= 2, got " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const std::size_t n = a.shape()[a.rank() - 1];
    const std::size_t m = a.shape()[a.rank() - 2];
    if (b.rank() == 2) {
        if (b.shape()[0] != n)
            throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                                        shape_str(b.shape()));
        const std::size_t p = b.shape()[1];
        const std::size_t rows = a.size() / n;  // fold leading dims with m
        Shape os(a.shape());
        os.back() = p;
        Tensor out(os);
        detail::mm(out.data(), a.data(), b.data(), rows, n, p);
        if (OpCtx::tracked(a) || OpCtx::tracked(b)) {
            std::int64_t ia = OpCtx::input_id(a), ib = OpCtx::input_id(b);
            auto ad = OpCtx::storage(a);
            auto bd = OpCtx::storage(b);
            std::size_t an = a.size();
            OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
                if (ia >= 0) detail::mm_abt(t.acc(ia, an).data(), g.data(), bd->data(), rows, p, n);
                if (ib >= 0) detail::mm_atb(t.acc(ib, n * p).data(), ad->data(), g.data(), rows, n, p);
            });
        }
        return out;
    }
    if (a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
        throw std::invalid_argument("matmul: leading dimensions disagree: " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    if (b.shape()[b.rank() - 2] != n)
        throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const std::size_t p = b.shape()[b.rank() - 1];
    const std::size_t batches = a.size() / (m * n);
    Shape os(a.shape());
    os.back() = p;
    Tensor out(os);
    for (std::size_t q = 0; q < batches; ++q)
        detail::mm(out.data() + q * m * p, a.data() + q * m * n, b.data() + q * n * p, m, n, p);
    if (OpCtx::tracked(a) || OpCtx::tracked(b)) {
        std::int64_t ia = OpCtx::input_id(a), ib = OpCtx::input_id(b);
        auto ad = OpCtx::storage(a);
        auto bd = OpCtx::storage(b);
        std::size_t an = a.size(), bn = b.size();
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            if (ia >= 0) {
                auto& ga = t.acc(ia, an);
                for (std::size_t q = 0; q < batches; ++q)
                    detail::mm_abt(ga.data() + q * m * n, g.data() + q * m * p, bd->data() + q * n * p, m, p, n);
            }
            if (ib >= 0) {
                auto& gb = t.acc(ib, bn);
                for (std::size_t q = 0; q < batches; ++q)
                    detail::mm_atb(gb.data() + q * n * p, ad->data() + q * m * n, g.data() + q * m * p, m, n, p);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                                    " changes element count");
    Tensor out(std::move(shape), a.vec());
    if (OpCtx::tracked(a)) {
        std::int64_t ia = OpCtx::input_id(a);
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            auto& slot = t.acc(ia, g.size());
            for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
        });
    }
    return out;
}

namespace detail {
inline void permute_copy(const double* src, const Shape& ss, double* dst, const std::vector<std::size_t>& perm) {
    const std::size_t r = ss.size();
    Shape os(r);
    for (std::size_t i = 0; i < r; ++i) os[i] = ss[perm[i]];
    std::vector<std::size_t> sstr(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) sstr[i] = sstr[i + 1] * ss[i + 1];
    std::vector<std::size_t> step(r);
    for (std::size_t i = 0; i < r; ++i) step[i] = sstr[perm[i]];
    std::vector<std::size_t> idx(r, 0);
    std::size_t so = 0;
    const std::size_t n = numel(ss);
    for (std::size_t i = 0; i < n; ++i) {
        dst[i] = src[so];
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            so += step[ax];
            if (idx[ax] < os[ax]) break;
            idx[ax] = 0;
            so -= step[ax] * os[ax];
        }
    }
}
}  // namespace detail

inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
    if (perm.size() != a.rank()) throw std::invalid_argument("permute: axis list must cover all axes");
    Shape os(a.rank());
    for (std::size_t i = 0; i < perm.size(); ++i) os[i] = a.shape()[perm[i]];
    Tensor out(os);
    detail::permute_copy(a.data(), a.shape(), out.data(), perm);
    if (OpCtx::tracked(a)) {
        std::int64_t ia = OpCtx::input_id(a);
        std::vector<std::size_t> inv(perm.size());
        for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            std::vector<double> gp(g.size());
            detail::permute_copy(g.data(), os, gp.data(), inv);
            auto& slot = t.acc(ia, g.size());
            for (std::size_t i = 0; i < g.size(); ++i) slot[i] += gp[i];
        });
    }
    return out;
}

inline Tensor transpose_last2(const Tensor& a) {
    std::vector<std::size_t> perm(a.rank());
    for (std::size_t i = 0; i < a.rank(); ++i) perm[i] = i;
    std::swap(perm[a.rank() - 1], perm[a.rank() - 2]);
    return permute(a, perm);
}

inline Tensor broadcast_to(const Tensor& a, const Shape& shape) {
    Shape os = broadcast_shape(a.shape(), shape);
    if (os != shape)
        throw std::invalid_argument("broadcast_to: cannot expand " + shape_str(a.shape()) + " to " +
                                    shape_str(shape));
    Tensor out(shape);
    {
        const auto st = detail::aligned_strides(a.shape(), shape);
        std::vector<std::size_t> idx(shape.size(), 0);
        std::size_t oa = 0;
        const std::size_t n = numel(shape);
        for (std::size_t i = 0; i < n; ++i) {
            out.data()[i] = a.data()[oa];
            for (std::size_t ax = shape.size(); ax-- > 0;) {
                ++idx[ax];
                oa += st[ax];
                if (idx[ax] < shape[ax]) break;
                idx[ax] = 0;
                oa -= st[ax] * shape[ax];
            }
        }
    }
    if (OpCtx::tracked(a)) {
        std::int64_t ia = OpCtx::input_id(a);
        Shape as = a.shape();
        std::size_t an = a.size();
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            detail::reduce_into(g.data(), os, t.acc(ia, an).data(), as);
        });
    }
    return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: empty input list");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw std::invalid_argument("concat: axis out of range");
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != s0.size()) throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t i = 0; i < s0.size(); ++i)
            if (i != axis && p.shape()[i] != s0[i])
                throw std::invalid_argument("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                            shape_str(s0));
        total += p.shape()[axis];
    }
    Shape os(s0);
    os[axis] = total;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    Tensor out(os);
    std::size_t col = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.shape()[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * total * inner) + col, p.data() + o * w, w * sizeof(double));
        col += w;
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || OpCtx::tracked(p);
    if (any) {
        std::vector<std::int64_t> ids;
        std::vector<std::size_t> widths, sizes;
        for (const Tensor& p : parts) {
            ids.push_back(OpCtx::input_id(p));
            widths.push_back(p.shape()[axis] * inner);
            sizes.push_back(p.size());
        }
        std::size_t row = total * inner;
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            std::size_t c = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (ids[k] >= 0) {
                    auto& slot = t.acc(ids[k], sizes[k]);
                    for (std::size_t o = 0; o < outer; ++o) {
                        const double* src = g.data() + o * row + c;
                        double* dst = slot.data() + o * widths[k];
                        for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
                    }
                }
                c += widths[k];
            }
        });
    }
    return out;
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= a.rank()) throw std::invalid_argument("slice: axis out of range");
    if (start + len > a.shape()[axis]) throw std::invalid_argument("slice: range exceeds axis extent");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
    Shape os(a.shape());
    os[axis] = len;
    Tensor out(os);
    const std::size_t row = a.shape()[axis] * inner, w = len * inner, off = start * inner;
    for (std::size_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * w, a.data() + o * row + off, w * sizeof(double));
    if (OpCtx::tracked(a)) {
        std::int64_t ia = OpCtx::input_id(a);
        std::size_t an = a.size();
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            auto& slot = t.acc(ia, an);
            for (std::size_t o = 0; o < outer; ++o) {
                const double* src = g.data() + o * w;
                double* dst = slot.data() + o * row + off;
                for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

// Gather along axis 0: out[i, ...] = a[idx[i], ...].
inline Tensor take_axis0(const Tensor& a, const std::vector<std::size_t>& idx) {
    if (a.rank() < 1) throw std::invalid_argument("take_axis0: rank 0 input");
    const std::size_t rows = a.shape()[0];
    const std::size_t w = a.size() / std::max<std::size_t>(rows, 1);
    for (std::size_t i : idx)
        if (i >= rows)
            throw std::out_of_range("take_axis0: index " + std::to_string(i) + " out of range [0," +
                                    std::to_string(rows) + ")");
    Shape os(a.shape());
    os[0] = idx.size();
    Tensor out(os);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data() + i * w, a.data() + idx[i] * w, w * sizeof(double));
    if (OpCtx::tracked(a)) {
        std::int64_t ia = OpCtx::input_id(a);
        std::size_t an = a.size();
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            auto& slot = t.acc(ia, an);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const double* src = g.data() + i * w;
                double* dst = slot.data() + idx[i] * w;
                for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// Row fetch from a [S x d] table; backward scatters into that row only.
inline Tensor gather_rows(const Tensor& table, std::size_t index) {
    if (table.rank() != 2) throw std::invalid_argument("gather_rows: table must be rank 2");
    if (index >= table.shape()[0])
        throw std::out_of_range("gather_rows: index " + std::to_string(index) + " out of range [0," +
                                std::to_string(table.shape()[0]) + ")");
    return reshape(take_axis0(table, {index}), Shape{table.shape()[1]});
}

// Row substitution: out[b, j, :] = row for flagged (b, j), else a[b, j, :].
// Flagged rows are bit-exact copies of `row`; unflagged rows of `a`.
inline Tensor replace_rows(const Tensor& a, const std::vector<std::uint8_t>& flags, const Tensor& row) {
    if (a.rank() != 3) throw std::invalid_argument("replace_rows: expected [B,k,d] input");
    const std::size_t bk = a.shape()[0] * a.shape()[1], d = a.shape()[2];
    if (flags.size() != bk) throw std::invalid_argument("replace_rows: flag count mismatch");
    if (row.size() != d) throw std::invalid_argument("replace_rows: row length mismatch");
    Tensor out = a.clone();
    for (std::size_t r = 0; r < bk; ++r)
        if (flags[r]) std::memcpy(out.data() + r * d, row.data(), d * sizeof(double));
    if (OpCtx::tracked(a) || OpCtx::tracked(row)) {
        std::int64_t ia = OpCtx::input_id(a), ir = OpCtx::input_id(row);
        std::size_t an = a.size();
        auto flags_c = std::make_shared<std::vector<std::uint8_t>>(flags);
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            if (ia >= 0) {
                auto& slot = t.acc(ia, an);
                for (std::size_t r = 0; r < bk; ++r) {
                    if ((*flags_c)[r]) continue;
                    const double* src = g.data() + r * d;
                    double* dst = slot.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                }
            }
            if (ir >= 0) {
                auto& slot = t.acc(ir, d);
                for (std::size_t r = 0; r < bk; ++r) {
                    if (!(*flags_c)[r]) continue;
                    const double* src = g.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j) slot[j] += src[j];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

namespace detail {
inline std::size_t norm_axis(int axis, std::size_t rank) {
    int r = static_cast<int>(rank);
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("reduce: axis out of range");
    return static_cast<std::size_t>(axis);
}
}  // namespace detail

inline Tensor sum(const Tensor& a, int axis, bool keepdim = false) {
    const std::size_t ax = detail::norm_axis(axis, a.rank());
    std::size_t outer = 1, inner = 1;
    const std::size_t n = a.shape()[ax];
    for (std::size_t i = 0; i < ax; ++i) outer *= a.shape()[i];
    for (std::size_t i = ax + 1; i < a.rank(); ++i) inner *= a.shape()[i];
    Shape os;
    for (std::size_t i = 0; i < a.rank(); ++i) {
        if (i == ax) {
            if (keepdim) os.push_back(1);
        } else {
            os.push_back(a.shape()[i]);
        }
    }
    if (os.empty()) os.push_back(1);
    Tensor out(os);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k) {
            const double* src = a.data() + (o * n + k) * inner;
            double* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    if (OpCtx::tracked(a)) {
        std::int64_t ia = OpCtx::input_id(a);
        std::size_t an = a.size();
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            auto& slot = t.acc(ia, an);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t k = 0; k < n; ++k) {
                    double* dst = slot.data() + (o * n + k) * inner;
                    const double* src = g.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                }
        });
    }
    return out;
}

inline Tensor mean(const Tensor& a, int axis, bool keepdim = false) {
    const std::size_t ax = detail::norm_axis(axis, a.rank());
    const double inv = 1.0 / static_cast<double>(a.shape()[ax]);
    return sum(a, axis, keepdim) * inv;
}

inline Tensor max(const Tensor& a, int axis, bool keepdim = false) {
    const std::size_t ax = detail::norm_axis(axis, a.rank());
    std::size_t outer = 1, inner = 1;
    const std::size_t n = a.shape()[ax];
    if (n == 0) throw std::invalid_argument("max: empty axis");
    for (std::size_t i = 0; i < ax; ++i) outer *= a.shape()[i];
    for (std::size_t i = ax + 1; i < a.rank(); ++i) inner *= a.shape()[i];
    Shape os;
    for (std::size_t i = 0; i < a.rank(); ++i) {
        if (i == ax) {
            if (keepdim) os.push_back(1);
        } else {
            os.push_back(a.shape()[i]);
        }
    }
    if (os.empty()) os.push_back(1);
    Tensor out(os);
    auto argmax = std::make_shared<std::vector<std::size_t>>(outer * inner);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            std::size_t best = 0;
            double bv = a.data()[(o * n) * inner + i];
            for (std::size_t k = 1; k < n; ++k) {
                double v = a.data()[(o * n + k) * inner + i];
                if (v > bv) {
                    bv = v;
                    best = k;
                }
            }
            out.data()[o * inner + i] = bv;
            (*argmax)[o * inner + i] = best;
        }
    if (OpCtx::tracked(a)) {
        std::int64_t ia = OpCtx::input_id(a);
        std::size_t an = a.size();
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            auto& slot = t.acc(ia, an);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    std::size_t k = (*argmax)[o * inner + i];
                    slot[(o * n + k) * inner + i] += g[o * inner + i];
                }
        });
    }
    return out;
}

inline Tensor sum_all(const Tensor& a) {
    Tensor flat = reshape(a, Shape{a.size()});
    return sum(flat, 0);
}

inline Tensor mean_all(const Tensor& a) { return sum_all(a) * (1.0 / static_cast<double>(a.size())); }

// ---------------------------------------------------------------------------
// Softmax over the last axis, max-subtracted for stability. NaN propagates.

inline Tensor softmax_lastdim(const Tensor& a) {
    if (a.rank() < 1 || a.shape().back() < 1)
        throw std::invalid_argument("softmax_lastdim: last axis must be non-empty");
    const std::size_t n = a.shape().back();
    const std::size_t rows = a.size() / n;
    Tensor out(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data() + r * n;
        double* y = out.data() + r * n;
        double m = x[0];
        for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = std::exp(x[i] - m);
            s += y[i];
        }
        const double inv = 1.0 / s;
        for (std::size_t i = 0; i < n; ++i) y[i] *= inv;
    }
    if (OpCtx::tracked(a)) {
        std::int64_t ia = OpCtx::input_id(a);
        auto od = OpCtx::storage(out);
        std::size_t an = a.size();
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            auto& slot = t.acc(ia, an);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = od->data() + r * n;
                const double* gr = g.data() + r * n;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += gr[i] * y[i];
                double* dst = slot.data() + r * n;
                for (std::size_t i = 0; i < n; ++i) dst[i] += y[i] * (gr[i] - dot);
            }
        });
    }
    return out;
}

}  // namespace tablab
