#include "trajlab/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>

namespace trajlab::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<bool> g_parallel_kernels{true};

std::string shape_str(const TensorData& d) {
    return "[" + std::to_string(d.shape[0]) + "," + std::to_string(d.shape[1]) + "]";
}

[[noreturn]] void shape_error(const char* op, const TensorData& a) {
    throw std::invalid_argument(std::string(op) + ": bad shape " + shape_str(a));
}

[[noreturn]] void shape_error(const char* op, const TensorData& a, const TensorData& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                                " and " + shape_str(b));
}

std::shared_ptr<TensorData> make_data(int rows, int cols) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("tensor: negative dimension");
    auto d = std::make_shared<TensorData>();
    d->shape = {rows, cols};
    d->v.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    return d;
}

bool track(std::initializer_list<const Tensor*> ins) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

void finish(Tensor& out, bool tracked, std::function<void()> pull) {
    if (tracked) {
        out.data()->requires_grad = true;
        Tape::active()->record(out.data(), std::move(pull));
    }
}

// Accumulating matmul kernels. Each output element is produced by exactly
// one thread with a fixed accumulation order, so results do not depend on
// the thread count.
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    const bool par = g_parallel_kernels.load(std::memory_order_relaxed) &&
                     static_cast<long long>(m) * k * n >= (1 << 15);
#pragma omp parallel for schedule(static) if (par)
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<std::size_t>(i) * n;
        const double* ai = a + static_cast<std::size_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            const double av = ai[l];
            const double* bl = b + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    const bool par = g_parallel_kernels.load(std::memory_order_relaxed) &&
                     static_cast<long long>(m) * k * n >= (1 << 15);
#pragma omp parallel for schedule(static) if (par)
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += ai[l] * bj[l];
            ci[j] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    const bool par = g_parallel_kernels.load(std::memory_order_relaxed) &&
                     static_cast<long long>(m) * k * n >= (1 << 15);
#pragma omp parallel for schedule(static) if (par)
    for (int l = 0; l < k; ++l) {
        double* cl = c + static_cast<std::size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const double av = a[static_cast<std::size_t>(i) * k + l];
            const double* bi = b + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) cl[j] += av * bi[j];
        }
    }
}

}  // namespace

void set_parallel_kernels(bool enabled) { g_parallel_kernels.store(enabled); }
bool parallel_kernels() { return g_parallel_kernels.load(); }

// ---- Tensor ------------------------------------------------------------

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
    auto d = make_data(rows, cols);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(int rows, int cols, double value, bool requires_grad) {
    auto d = make_data(rows, cols);
    d->requires_grad = requires_grad;
    for (double& x : d->v) x = value;
    return Tensor(std::move(d));
}

Tensor Tensor::from_values(int rows, int cols, std::vector<double> values, bool requires_grad) {
    if (values.size() != static_cast<std::size_t>(rows) * cols)
        throw std::invalid_argument("from_values: element count does not match shape");
    auto d = std::make_shared<TensorData>();
    d->shape = {rows, cols};
    d->v = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value) { return full(1, 1, value); }

int Tensor::rows() const { return data_->shape[0]; }
int Tensor::cols() const { return data_->shape[1]; }
std::size_t Tensor::numel() const { return data_->numel(); }
bool Tensor::requires_grad() const { return data_ && data_->requires_grad; }

double Tensor::value() const {
    if (numel() != 1) shape_error("value", *data_);
    return data_->v[0];
}

double Tensor::at(int r, int c) const {
    return data_->v[static_cast<std::size_t>(r) * cols() + c];
}

std::span<const double> Tensor::values() const { return data_->v; }
std::span<double> Tensor::raw_values() { return data_->v; }

std::span<const double> Tensor::grad() const {
    data_->ensure_grad();
    return data_->g;
}

void Tensor::zero_grad() {
    data_->ensure_grad();
    std::fill(data_->g.begin(), data_->g.end(), 0.0);
}

// ---- Tape ---------------------------------------------------------------

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }
Tape::~Tape() { g_active_tape = prev_; }
Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<TensorData> out, std::function<void()> pull) {
    entries_.push_back({std::move(out), std::move(pull)});
}

void Tape::backward(const Tensor& loss) {
    if (used_) throw std::logic_error("Tape::backward called twice on one recording");
    used_ = true;
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!std::isfinite(loss.value())) throw std::runtime_error("backward: non-finite loss");
    loss.data()->ensure_grad();
    loss.data()->g[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (!it->out->g.empty()) it->pull();
    }
}

// ---- elementwise helpers --------------------------------------------------

namespace {

using DataPtr = std::shared_ptr<TensorData>;

// out = f(a) elementwise, with df supplying the local derivative from the
// saved output and input values.
template <typename F, typename DF>
Tensor unary_op(const char* name, const Tensor& a, F f, DF df) {
    (void)name;
    auto out = Tensor::zeros(a.rows(), a.cols());
    const auto& av = a.data()->v;
    auto& ov = out.data()->v;
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i]);
    bool tracked = track({&a});
    DataPtr ad = a.data(), od = out.data();
    finish(out, tracked, [ad, od, df]() {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->g.size(); ++i)
            ad->g[i] += od->g[i] * df(ad->v[i], od->v[i]);
    });
    return out;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, *a.data(), *b.data());
}

}  // namespace

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) shape_error("matmul", *a.data(), *b.data());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    auto out = Tensor::zeros(m, n);
    mm_nn(a.data()->v.data(), b.data()->v.data(), out.data()->v.data(), m, k, n);
    bool tracked = track({&a, &b});
    DataPtr ad = a.data(), bd = b.data(), od = out.data();
    finish(out, tracked, [ad, bd, od, m, k, n]() {
        if (ad->requires_grad) {
            ad->ensure_grad();
            mm_nt(od->g.data(), bd->v.data(), ad->g.data(), m, n, k);
        }
        if (bd->requires_grad) {
            bd->ensure_grad();
            mm_tn(ad->v.data(), od->g.data(), bd->g.data(), m, k, n);
        }
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    auto out = Tensor::zeros(a.rows(), a.cols());
    const auto& av = a.data()->v;
    const auto& bv = b.data()->v;
    auto& ov = out.data()->v;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    bool tracked = track({&a, &b});
    DataPtr ad = a.data(), bd = b.data(), od = out.data();
    finish(out, tracked, [ad, bd, od]() {
        if (ad->requires_grad) {
            ad->ensure_grad();
            for (std::size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i];
        }
        if (bd->requires_grad) {
            bd->ensure_grad();
            for (std::size_t i = 0; i < od->g.size(); ++i) bd->g[i] += od->g[i];
        }
    });
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_rowvec", *a.data(), *row.data());
    const int m = a.rows(), n = a.cols();
    auto out = Tensor::zeros(m, n);
    const auto& av = a.data()->v;
    const auto& rv = row.data()->v;
    auto& ov = out.data()->v;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ov[static_cast<std::size_t>(i) * n + j] = av[static_cast<std::size_t>(i) * n + j] + rv[j];
    bool tracked = track({&a, &row});
    DataPtr ad = a.data(), rd = row.data(), od = out.data();
    finish(out, tracked, [ad, rd, od, m, n]() {
        if (ad->requires_grad) {
            ad->ensure_grad();
            for (std::size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i];
        }
        if (rd->requires_grad) {
            rd->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) rd->g[j] += od->g[static_cast<std::size_t>(i) * n + j];
        }
    });
    return out;
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op("add_scalar", a, [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    auto out = Tensor::zeros(a.rows(), a.cols());
    const auto& av = a.data()->v;
    const auto& bv = b.data()->v;
    auto& ov = out.data()->v;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    bool tracked = track({&a, &b});
    DataPtr ad = a.data(), bd = b.data(), od = out.data();
    finish(out, tracked, [ad, bd, od]() {
        if (ad->requires_grad) {
            ad->ensure_grad();
            for (std::size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i];
        }
        if (bd->requires_grad) {
            bd->ensure_grad();
            for (std::size_t i = 0; i < od->g.size(); ++i) bd->g[i] -= od->g[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    auto out = Tensor::zeros(a.rows(), a.cols());
    const auto& av = a.data()->v;
    const auto& bv = b.data()->v;
    auto& ov = out.data()->v;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    bool tracked = track({&a, &b});
    DataPtr ad = a.data(), bd = b.data(), od = out.data();
    finish(out, tracked, [ad, bd, od]() {
        if (ad->requires_grad) {
            ad->ensure_grad();
            for (std::size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i] * bd->v[i];
        }
        if (bd->requires_grad) {
            bd->ensure_grad();
            for (std::size_t i = 0; i < od->g.size(); ++i) bd->g[i] += od->g[i] * ad->v[i];
        }
    });
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape("div", a, b);
    auto out = Tensor::zeros(a.rows(), a.cols());
    const auto& av = a.data()->v;
    const auto& bv = b.data()->v;
    auto& ov = out.data()->v;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
    bool tracked = track({&a, &b});
    DataPtr ad = a.data(), bd = b.data(), od = out.data();
    finish(out, tracked, [ad, bd, od]() {
        if (ad->requires_grad) {
            ad->ensure_grad();
            for (std::size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i] / bd->v[i];
        }
        if (bd->requires_grad) {
            bd->ensure_grad();
            for (std::size_t i = 0; i < od->g.size(); ++i)
                bd->g[i] -= od->g[i] * od->v[i] / bd->v[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double c) {
    return unary_op("scale", a, [c](double x) { return x * c; },
                    [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
    return unary_op("square", a, [](double x) { return x * x; },
                    [](double x, double) { return 2.0 * x; });
}

Tensor ln(const Tensor& a) {
    return unary_op("ln", a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
    return unary_op("exp", a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor elu(const Tensor& a) {
    return unary_op("elu", a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
                    [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Tensor softplus(const Tensor& a, double beta) {
    if (beta <= 0.0) throw std::invalid_argument("softplus: beta must be positive");
    auto f = [beta](double x) {
        const double bx = beta * x;
        const double y = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(bx))) / beta;
        // softplus is strictly positive; keep that true under underflow
        return std::max(y, std::numeric_limits<double>::min());
    };
    auto df = [beta](double x, double) {
        const double bx = beta * x;
        if (bx >= 0.0) return 1.0 / (1.0 + std::exp(-bx));
        const double e = std::exp(bx);
        return e / (1.0 + e);
    };
    return unary_op("softplus", a, f, df);
}

Tensor softmax(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    auto out = Tensor::zeros(m, n);
    const auto& av = a.data()->v;
    auto& ov = out.data()->v;
    for (int i = 0; i < m; ++i) {
        const double* x = av.data() + static_cast<std::size_t>(i) * n;
        double* y = ov.data() + static_cast<std::size_t>(i) * n;
        double mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (int j = 0; j < n; ++j) y[j] /= z;
    }
    bool tracked = track({&a});
    DataPtr ad = a.data(), od = out.data();
    finish(out, tracked, [ad, od, m, n]() {
        ad->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const double* y = od->v.data() + static_cast<std::size_t>(i) * n;
            const double* gy = od->g.data() + static_cast<std::size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
            double* gx = ad->g.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
    return out;
}

Tensor log_softmax(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    auto out = Tensor::zeros(m, n);
    const auto& av = a.data()->v;
    auto& ov = out.data()->v;
    for (int i = 0; i < m; ++i) {
        const double* x = av.data() + static_cast<std::size_t>(i) * n;
        double* y = ov.data() + static_cast<std::size_t>(i) * n;
        double mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(x[j] - mx);
        const double lz = mx + std::log(z);
        for (int j = 0; j < n; ++j) y[j] = x[j] - lz;
    }
    bool tracked = track({&a});
    DataPtr ad = a.data(), od = out.data();
    finish(out, tracked, [ad, od, m, n]() {
        ad->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const double* y = od->v.data() + static_cast<std::size_t>(i) * n;
            const double* gy = od->g.data() + static_cast<std::size_t>(i) * n;
            double gsum = 0.0;
            for (int j = 0; j < n; ++j) gsum += gy[j];
            double* gx = ad->g.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) gx[j] += gy[j] - std::exp(y[j]) * gsum;
        }
    });
    return out;
}

Tensor sum(const Tensor& a) {
    auto out = Tensor::zeros(1, 1);
    double s = 0.0;
    for (double x : a.data()->v) s += x;
    out.data()->v[0] = s;
    bool tracked = track({&a});
    DataPtr ad = a.data(), od = out.data();
    finish(out, tracked, [ad, od]() {
        ad->ensure_grad();
        const double g = od->g[0];
        for (double& gi : ad->g) gi += g;
    });
    return out;
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int m = parts[0].rows();
    int n = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != m) shape_error("concat_cols", *parts[0].data(), *p.data());
        n += p.cols();
    }
    auto out = Tensor::zeros(m, n);
    auto& ov = out.data()->v;
    int off = 0;
    for (const Tensor& p : parts) {
        const int pc = p.cols();
        const auto& pv = p.data()->v;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pc; ++j)
                ov[static_cast<std::size_t>(i) * n + off + j] = pv[static_cast<std::size_t>(i) * pc + j];
        off += pc;
    }
    bool tracked = false;
    for (const Tensor& p : parts) tracked = tracked || (Tape::active() && p.requires_grad());
    std::vector<DataPtr> pds;
    for (const Tensor& p : parts) pds.push_back(p.data());
    DataPtr od = out.data();
    finish(out, tracked, [pds, od, m, n]() {
        int off = 0;
        for (const auto& pd : pds) {
            const int pc = pd->shape[1];
            if (pd->requires_grad) {
                pd->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < pc; ++j)
                        pd->g[static_cast<std::size_t>(i) * pc + j] +=
                            od->g[static_cast<std::size_t>(i) * n + off + j];
            }
            off += pc;
        }
    });
    return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const int n = parts[0].cols();
    int m = 0;
    for (const Tensor& p : parts) {
        if (p.cols() != n) shape_error("concat_rows", *parts[0].data(), *p.data());
        m += p.rows();
    }
    auto out = Tensor::zeros(m, n);
    auto& ov = out.data()->v;
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const auto& pv = p.data()->v;
        std::copy(pv.begin(), pv.end(), ov.begin() + off);
        off += pv.size();
    }
    bool tracked = false;
    for (const Tensor& p : parts) tracked = tracked || (Tape::active() && p.requires_grad());
    std::vector<DataPtr> pds;
    for (const Tensor& p : parts) pds.push_back(p.data());
    DataPtr od = out.data();
    finish(out, tracked, [pds, od]() {
        std::size_t off = 0;
        for (const auto& pd : pds) {
            if (pd->requires_grad) {
                pd->ensure_grad();
                for (std::size_t i = 0; i < pd->v.size(); ++i) pd->g[i] += od->g[off + i];
            }
            off += pd->v.size();
        }
    });
    return out;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
    if (start < 0 || len < 0 || start + len > a.cols()) shape_error("slice_cols", *a.data());
    const int m = a.rows(), n = a.cols();
    auto out = Tensor::zeros(m, len);
    const auto& av = a.data()->v;
    auto& ov = out.data()->v;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j)
            ov[static_cast<std::size_t>(i) * len + j] = av[static_cast<std::size_t>(i) * n + start + j];
    bool tracked = track({&a});
    DataPtr ad = a.data(), od = out.data();
    finish(out, tracked, [ad, od, m, n, start, len]() {
        ad->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < len; ++j)
                ad->g[static_cast<std::size_t>(i) * n + start + j] +=
                    od->g[static_cast<std::size_t>(i) * len + j];
    });
    return out;
}

Tensor repeat_cols(const Tensor& a, int times) {
    if (a.cols() != 1 || times < 1) shape_error("repeat_cols", *a.data());
    const int m = a.rows();
    auto out = Tensor::zeros(m, times);
    const auto& av = a.data()->v;
    auto& ov = out.data()->v;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < times; ++j) ov[static_cast<std::size_t>(i) * times + j] = av[i];
    bool tracked = track({&a});
    DataPtr ad = a.data(), od = out.data();
    finish(out, tracked, [ad, od, m, times]() {
        ad->ensure_grad();
        for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int j = 0; j < times; ++j) s += od->g[static_cast<std::size_t>(i) * times + j];
            ad->g[i] += s;
        }
    });
    return out;
}

Tensor rows_select(const Tensor& a, std::span<const int> idx) {
    const int m = a.rows(), n = a.cols();
    for (int r : idx)
        if (r < 0 || r >= m) throw std::invalid_argument("rows_select: index out of range");
    auto out = Tensor::zeros(static_cast<int>(idx.size()), n);
    const auto& av = a.data()->v;
    auto& ov = out.data()->v;
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(av.begin() + static_cast<std::size_t>(idx[r]) * n,
                  av.begin() + static_cast<std::size_t>(idx[r] + 1) * n, ov.begin() + r * n);
    bool tracked = track({&a});
    DataPtr ad = a.data(), od = out.data();
    std::vector<int> index(idx.begin(), idx.end());
    finish(out, tracked, [ad, od, index, n]() {
        ad->ensure_grad();
        for (std::size_t r = 0; r < index.size(); ++r)
            for (int j = 0; j < n; ++j)
                ad->g[static_cast<std::size_t>(index[r]) * n + j] += od->g[r * n + j];
    });
    return out;
}

Tensor rows_scatter_add(const Tensor& a, std::span<const int> idx, int out_rows) {
    const int n = a.cols();
    if (static_cast<std::size_t>(a.rows()) != idx.size())
        throw std::invalid_argument("rows_scatter_add: index count must equal row count");
    for (int r : idx)
        if (r < 0 || r >= out_rows) throw std::invalid_argument("rows_scatter_add: index out of range");
    auto out = Tensor::zeros(out_rows, n);
    const auto& av = a.data()->v;
    auto& ov = out.data()->v;
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < n; ++j)
            ov[static_cast<std::size_t>(idx[r]) * n + j] += av[r * n + j];
    bool tracked = track({&a});
    DataPtr ad = a.data(), od = out.data();
    std::vector<int> index(idx.begin(), idx.end());
    finish(out, tracked, [ad, od, index, n]() {
        ad->ensure_grad();
        for (std::size_t r = 0; r < index.size(); ++r)
            for (int j = 0; j < n; ++j)
                ad->g[r * n + j] += od->g[static_cast<std::size_t>(index[r]) * n + j];
    });
    return out;
}

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>* batch_mean, std::vector<double>* batch_var) {
    const int m = x.rows(), n = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != n) shape_error("batch_norm", *x.data(), *gamma.data());
    if (beta.rows() != 1 || beta.cols() != n) shape_error("batch_norm", *x.data(), *beta.data());
    if (m < 1) throw std::invalid_argument("batch_norm: empty batch");

    std::vector<double> mu(n, 0.0), var(n, 0.0), istd(n, 0.0);
    const auto& xv = x.data()->v;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) mu[j] += xv[static_cast<std::size_t>(i) * n + j];
    for (int j = 0; j < n; ++j) mu[j] /= m;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            const double d = xv[static_cast<std::size_t>(i) * n + j] - mu[j];
            var[j] += d * d;
        }
    for (int j = 0; j < n; ++j) {
        var[j] /= m;
        istd[j] = 1.0 / std::sqrt(var[j] + eps);
    }
    if (batch_mean) *batch_mean = mu;
    if (batch_var) *batch_var = var;

    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m) * n);
    auto out = Tensor::zeros(m, n);
    auto& ov = out.data()->v;
    const auto& gv = gamma.data()->v;
    const auto& bv = beta.data()->v;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            const std::size_t p = static_cast<std::size_t>(i) * n + j;
            (*xhat)[p] = (xv[p] - mu[j]) * istd[j];
            ov[p] = gv[j] * (*xhat)[p] + bv[j];
        }

    bool tracked = track({&x, &gamma, &beta});
    DataPtr xd = x.data(), gd = gamma.data(), bd = beta.data(), od = out.data();
    auto istd_sp = std::make_shared<std::vector<double>>(std::move(istd));
    finish(out, tracked, [xd, gd, bd, od, xhat, istd_sp, m, n]() {
        // d(gamma), d(beta)
        std::vector<double> dg(n, 0.0), db(n, 0.0), dxhat_mean(n, 0.0), dxhat_xhat_mean(n, 0.0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const std::size_t p = static_cast<std::size_t>(i) * n + j;
                dg[j] += od->g[p] * (*xhat)[p];
                db[j] += od->g[p];
            }
        if (gd->requires_grad) {
            gd->ensure_grad();
            for (int j = 0; j < n; ++j) gd->g[j] += dg[j];
        }
        if (bd->requires_grad) {
            bd->ensure_grad();
            for (int j = 0; j < n; ++j) bd->g[j] += db[j];
        }
        if (xd->requires_grad) {
            xd->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const std::size_t p = static_cast<std::size_t>(i) * n + j;
                    const double dxhat = od->g[p] * gd->v[j];
                    dxhat_mean[j] += dxhat;
                    dxhat_xhat_mean[j] += dxhat * (*xhat)[p];
                }
            for (int j = 0; j < n; ++j) {
                dxhat_mean[j] /= m;
                dxhat_xhat_mean[j] /= m;
            }
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const std::size_t p = static_cast<std::size_t>(i) * n + j;
                    const double dxhat = od->g[p] * gd->v[j];
                    xd->g[p] += (*istd_sp)[j] * (dxhat - dxhat_mean[j] - (*xhat)[p] * dxhat_xhat_mean[j]);
                }
        }
    });
    return out;
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       std::span<const double> mean, std::span<const double> var, double eps) {
    const int m = x.rows(), n = x.cols();
    if (gamma.cols() != n || beta.cols() != n || static_cast<int>(mean.size()) != n ||
        static_cast<int>(var.size()) != n)
        shape_error("batch_norm_eval", *x.data(), *gamma.data());
    auto out = Tensor::zeros(m, n);
    const auto& xv = x.data()->v;
    const auto& gv = gamma.data()->v;
    const auto& bv = beta.data()->v;
    auto& ov = out.data()->v;
    std::vector<double> istd(n);
    for (int j = 0; j < n; ++j) istd[j] = 1.0 / std::sqrt(var[j] + eps);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            const std::size_t p = static_cast<std::size_t>(i) * n + j;
            ov[p] = gv[j] * (xv[p] - mean[j]) * istd[j] + bv[j];
        }
    bool tracked = track({&x, &gamma, &beta});
    DataPtr xd = x.data(), gd = gamma.data(), bd = beta.data(), od = out.data();
    auto istd_sp = std::make_shared<std::vector<double>>(std::move(istd));
    auto mean_cp = std::make_shared<std::vector<double>>(mean.begin(), mean.end());
    finish(out, tracked, [xd, gd, bd, od, istd_sp, mean_cp, m, n]() {
        if (xd->requires_grad) {
            xd->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const std::size_t p = static_cast<std::size_t>(i) * n + j;
                    xd->g[p] += od->g[p] * gd->v[j] * (*istd_sp)[j];
                }
        }
        if (gd->requires_grad) {
            gd->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const std::size_t p = static_cast<std::size_t>(i) * n + j;
                    gd->g[j] += od->g[p] * (xd->v[p] - (*mean_cp)[j]) * (*istd_sp)[j];
                }
        }
        if (bd->requires_grad) {
            bd->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) bd->g[j] += od->g[static_cast<std::size_t>(i) * n + j];
        }
    });
    return out;
}

}  // namespace trajlab::ad
