#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace trajlab::ad {

struct TensorData {
    std::vector<int> shape;   // always rank 2: {rows, cols}
    std::vector<double> v;
    std::vector<double> g;    // lazily allocated
    bool requires_grad = false;

    std::size_t numel() const { return v.size(); }
    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), 0.0);
    }
};

/// Dense 2-D tensor of doubles. Handles share storage; operations build a
/// reverse-mode graph on the active Tape whenever an input requires
/// gradients. Single-threaded per tape; independent tapes may run in
/// parallel threads.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(int rows, int cols, bool requires_grad = false);
    static Tensor full(int rows, int cols, double value, bool requires_grad = false);
    static Tensor from_values(int rows, int cols, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor wrap(std::shared_ptr<TensorData> d) { return Tensor(std::move(d)); }

    bool defined() const { return data_ != nullptr; }
    int rows() const;
    int cols() const;
    std::size_t numel() const;
    bool requires_grad() const;

    double value() const;  // requires numel() == 1
    double at(int r, int c) const;
    std::span<const double> values() const;
    // Untracked mutation (parameter init, optimizer updates).
    std::span<double> raw_values();
    std::span<const double> grad() const;
    void zero_grad();

    const std::shared_ptr<TensorData>& data() const { return data_; }

  private:
    explicit Tensor(std::shared_ptr<TensorData> d) : data_(std::move(d)) {}
    std::shared_ptr<TensorData> data_;
};

/// Records one forward pass; scoped and re-entrant (nested tapes shadow the
/// outer one). backward() may run once per recording.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::shared_ptr<TensorData> out, std::function<void()> pull);
    void backward(const Tensor& loss);
    std::size_t n_recorded() const { return entries_.size(); }

  private:
    struct Entry {
        std::shared_ptr<TensorData> out;
        std::function<void()> pull;
    };
    std::vector<Entry> entries_;
    bool used_ = false;
    Tape* prev_ = nullptr;
};

// Toggles OpenMP inside the matmul kernels. Results are bitwise identical
// either way (each output element keeps its sequential accumulation order).
void set_parallel_kernels(bool enabled);
bool parallel_kernels();

// ---- primitives ------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& a, const Tensor& row);  // [m,n] + [1,n]
Tensor add_scalar(const Tensor& a, double c);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor ln(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor elu(const Tensor& a);                 // alpha = 1
Tensor softplus(const Tensor& a, double beta);
Tensor softmax(const Tensor& a);             // per row
Tensor log_softmax(const Tensor& a);         // per row
Tensor sum(const Tensor& a);                 // -> [1,1]
Tensor mean(const Tensor& a);                // -> [1,1]
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor repeat_cols(const Tensor& a, int times);  // [m,1] -> [m,times]
Tensor rows_select(const Tensor& a, std::span<const int> idx);
Tensor rows_scatter_add(const Tensor& a, std::span<const int> idx, int out_rows);

// Batch norm over rows (per-column statistics, biased variance). The
// training variant reports batch statistics so the caller can maintain
// running buffers; the eval variant consumes fixed statistics.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>* batch_mean = nullptr,
                        std::vector<double>* batch_var = nullptr);
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       std::span<const double> mean, std::span<const double> var, double eps);

}  // namespace trajlab::ad
