#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rlcf/corpus.hpp"

// Minimal reverse-mode differentiation over dense row-major matrices. Only the
// operations the policy model needs are provided; each records a closure that
// propagates its output gradient to its inputs.
namespace rlcf::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// Forward kernels shared with the cache-based decoder.
namespace kernels {
inline constexpr double kLayerNormEps = 1e-5;

void layer_norm_row(const double* x, const double* gain, const double* bias, Index width, double* out,
                    double* xhat = nullptr, double* inv_std = nullptr);
double gelu(double x);
double gelu_grad(double x);
// In-place log-softmax of a contiguous row.
void log_softmax_row(double* row, Index n);
}  // namespace kernels

class Tape {
 public:
  using Var = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Non-differentiable input.
  Var constant(Matrix value);
  // Parameter; gradients are added into *grad_sink on backward (if non-null).
  // The referenced value must outlive the tape.
  Var param(const Matrix& value, Matrix* grad_sink);

  Var gather_rows(Var table, std::span<const TokenId> ids);
  Var gather_range(Var table, Index start, Index count);
  Var slice_rows(Var x, Index start, Index count);
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // row broadcast over a's rows
  Var matmul(Var a, Var b);
  Var matmul_transposed(Var a, Var b);  // a * b^T
  Var layer_norm(Var x, Var gain, Var bias);
  Var gelu(Var x);
  // qkv is T x 3H laid out [Q | K | V]; returns T x H.
  Var causal_attention(Var qkv, int heads);
  Var log_softmax(Var logits);
  // n x 1 column of m(i, cols[i]).
  Var pick(Var m, std::span<const TokenId> cols);

  const Matrix& value(Var v) const;

  // Seeds d(loss)/d(var) for each listed var and runs the reverse sweep.
  void backward(std::span<const std::pair<Var, Matrix>> seeds);
  void backward(Var scalar);

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    Matrix* sink = nullptr;
    std::function<void()> back;
  };

  std::vector<Node> nodes_;

  Var push(Matrix value, bool needs_grad);
  Matrix& grad(Var v);
  bool needs(Var v) const { return nodes_[static_cast<size_t>(v)].needs_grad; }
};

}  // namespace rlcf::ad
