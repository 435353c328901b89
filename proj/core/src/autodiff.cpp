#include "rlcf/autodiff.hpp"

#include <cmath>
#include <limits>

#include "rlcf/error.hpp"

namespace rlcf::ad {

namespace kernels {

void layer_norm_row(const double* x, const double* gain, const double* bias, Index width, double* out,
                    double* xhat, double* inv_std) {
  double mean = 0.0;
  for (Index i = 0; i < width; ++i) mean += x[i];
  mean /= static_cast<double>(width);
  double var = 0.0;
  for (Index i = 0; i < width; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(width);
  const double s = 1.0 / std::sqrt(var + kLayerNormEps);
  for (Index i = 0; i < width; ++i) {
    const double h = (x[i] - mean) * s;
    if (xhat != nullptr) xhat[i] = h;
    out[i] = h * gain[i] + bias[i];
  }
  if (inv_std != nullptr) *inv_std = s;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void log_softmax_row(double* row, Index n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) mx = std::max(mx, row[i]);
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) sum += std::exp(row[i] - mx);
  const double lse = mx + std::log(sum);
  for (Index i = 0; i < n; ++i) row[i] -= lse;
}

}  // namespace kernels

Tape::Var Tape::push(Matrix value, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v)];
  return n.ref != nullptr ? *n.ref : n.value;
}

Matrix& Tape::grad(Var v) {
  Node& n = nodes_[static_cast<size_t>(v)];
  if (!n.has_grad) {
    const Matrix& val = n.ref != nullptr ? *n.ref : n.value;
    n.grad = Matrix::Zero(val.rows(), val.cols());
    n.has_grad = true;
  }
  return n.grad;
}

Tape::Var Tape::constant(Matrix value) { return push(std::move(value), false); }

Tape::Var Tape::param(const Matrix& value, Matrix* grad_sink) {
  const Var v = push(Matrix(), grad_sink != nullptr);
  nodes_.back().ref = &value;
  nodes_.back().sink = grad_sink;
  return v;
}

Tape::Var Tape::gather_rows(Var table, std::span<const TokenId> ids) {
  const Matrix& t = value(table);
  Matrix out(static_cast<Index>(ids.size()), t.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows()) throw Error("token id outside embedding table");
    out.row(static_cast<Index>(i)) = t.row(ids[i]);
  }
  const Var v = push(std::move(out), needs(table));
  if (needs(table)) {
    std::vector<TokenId> idx(ids.begin(), ids.end());
    nodes_.back().back = [this, v, table, idx = std::move(idx)] {
      Matrix& g = grad(table);
      const Matrix& go = nodes_[static_cast<size_t>(v)].grad;
      for (size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += go.row(static_cast<Index>(i));
    };
  }
  return v;
}

Tape::Var Tape::gather_range(Var table, Index start, Index count) {
  const Matrix& t = value(table);
  if (start < 0 || start + count > t.rows()) throw Error("row range outside table");
  const Var v = push(t.middleRows(start, count), needs(table));
  if (needs(table)) {
    nodes_.back().back = [this, v, table, start, count] {
      grad(table).middleRows(start, count) += nodes_[static_cast<size_t>(v)].grad;
    };
  }
  return v;
}

Tape::Var Tape::slice_rows(Var x, Index start, Index count) { return gather_range(x, start, count); }

Tape::Var Tape::add(Var a, Var b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) throw Error("add: shape mismatch");
  const bool ng = needs(a) || needs(b);
  const Var v = push(va + vb, ng);
  if (ng) {
    nodes_.back().back = [this, v, a, b] {
      const Matrix& go = nodes_[static_cast<size_t>(v)].grad;
      if (needs(a)) grad(a) += go;
      if (needs(b)) grad(b) += go;
    };
  }
  return v;
}

Tape::Var Tape::add_row(Var a, Var row) {
  const Matrix& va = value(a);
  const Matrix& vr = value(row);
  if (vr.rows() != 1 || vr.cols() != va.cols()) throw Error("add_row: shape mismatch");
  Matrix out = va;
  out.rowwise() += vr.row(0);
  const bool ng = needs(a) || needs(row);
  const Var v = push(std::move(out), ng);
  if (ng) {
    nodes_.back().back = [this, v, a, row] {
      const Matrix& go = nodes_[static_cast<size_t>(v)].grad;
      if (needs(a)) grad(a) += go;
      if (needs(row)) grad(row) += go.colwise().sum();
    };
  }
  return v;
}

Tape::Var Tape::matmul(Var a, Var b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.cols() != vb.rows()) throw Error("matmul: shape mismatch");
  Matrix out = va * vb;
  const bool ng = needs(a) || needs(b);
  const Var v = push(std::move(out), ng);
  if (ng) {
    nodes_.back().back = [this, v, a, b] {
      const Matrix& go = nodes_[static_cast<size_t>(v)].grad;
      if (needs(a)) grad(a).noalias() += go * value(b).transpose();
      if (needs(b)) grad(b).noalias() += value(a).transpose() * go;
    };
  }
  return v;
}

Tape::Var Tape::matmul_transposed(Var a, Var b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.cols() != vb.cols()) throw Error("matmul_transposed: shape mismatch");
  Matrix out = va * vb.transpose();
  const bool ng = needs(a) || needs(b);
  const Var v = push(std::move(out), ng);
  if (ng) {
    nodes_.back().back = [this, v, a, b] {
      const Matrix& go = nodes_[static_cast<size_t>(v)].grad;
      if (needs(a)) grad(a).noalias() += go * value(b);
      if (needs(b)) grad(b).noalias() += go.transpose() * value(a);
    };
  }
  return v;
}

Tape::Var Tape::layer_norm(Var x, Var gain, Var bias) {
  const Matrix& vx = value(x);
  const Matrix& vg = value(gain);
  const Matrix& vb = value(bias);
  const Index rows = vx.rows();
  const Index width = vx.cols();
  Matrix out(rows, width);
  Matrix xhat(rows, width);
  Eigen::VectorXd inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    kernels::layer_norm_row(vx.row(r).data(), vg.data(), vb.data(), width, out.row(r).data(),
                            xhat.row(r).data(), &inv_std[r]);
  }
  const bool ng = needs(x) || needs(gain) || needs(bias);
  const Var v = push(std::move(out), ng);
  if (ng) {
    nodes_.back().back = [this, v, x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const Matrix& go = nodes_[static_cast<size_t>(v)].grad;
      const Index width = go.cols();
      if (needs(gain)) grad(gain).row(0) += (go.array() * xhat.array()).colwise().sum().matrix();
      if (needs(bias)) grad(bias).row(0) += go.colwise().sum();
      if (needs(x)) {
        const auto g = value(gain).row(0).array();
        Matrix& gx = grad(x);
        for (Index r = 0; r < go.rows(); ++r) {
          const Eigen::ArrayXd dxhat = (go.row(r).array() * g).transpose();
          const double mean_d = dxhat.sum() / static_cast<double>(width);
          const double mean_dx = (dxhat * xhat.row(r).array().transpose()).sum() / static_cast<double>(width);
          gx.row(r).array() +=
              (inv_std[r] * (dxhat - mean_d - xhat.row(r).array().transpose() * mean_dx)).transpose();
        }
      }
    };
  }
  return v;
}

Tape::Var Tape::gelu(Var x) {
  const Matrix& vx = value(x);
  Matrix out = vx.unaryExpr([](double z) { return kernels::gelu(z); });
  const Var v = push(std::move(out), needs(x));
  if (needs(x)) {
    nodes_.back().back = [this, v, x] {
      const Matrix& go = nodes_[static_cast<size_t>(v)].grad;
      grad(x).array() += go.array() * value(x).unaryExpr([](double z) { return kernels::gelu_grad(z); }).array();
    };
  }
  return v;
}

Tape::Var Tape::causal_attention(Var qkv, int heads) {
  const Matrix& in = value(qkv);
  const Index t = in.rows();
  if (heads <= 0 || in.cols() % (3 * heads) != 0) throw Error("attention: width not divisible by heads");
  const Index width = in.cols() / 3;
  const Index dh = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix out(t, width);
  std::vector<Matrix> probs(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto q = in.block(0, h * dh, t, dh);
    const auto k = in.block(0, width + h * dh, t, dh);
    const auto val = in.block(0, 2 * width + h * dh, t, dh);
    Matrix s = (q * k.transpose()) * scale;
    for (Index i = 0; i < t; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j <= i; ++j) mx = std::max(mx, s(i, j));
      double sum = 0.0;
      for (Index j = 0; j <= i; ++j) {
        s(i, j) = std::exp(s(i, j) - mx);
        sum += s(i, j);
      }
      for (Index j = 0; j <= i; ++j) s(i, j) /= sum;
      for (Index j = i + 1; j < t; ++j) s(i, j) = 0.0;
    }
    out.block(0, h * dh, t, dh).noalias() = s * val;
    probs[static_cast<size_t>(h)] = std::move(s);
  }
  const Var v = push(std::move(out), needs(qkv));
  if (needs(qkv)) {
    nodes_.back().back = [this, v, qkv, heads, width, dh, scale, probs = std::move(probs)] {
      const Matrix& go = nodes_[static_cast<size_t>(v)].grad;
      const Matrix& in = value(qkv);
      Matrix& g = grad(qkv);
      const Index t = in.rows();
      for (int h = 0; h < heads; ++h) {
        const Matrix& p = probs[static_cast<size_t>(h)];
        const auto q = in.block(0, h * dh, t, dh);
        const auto k = in.block(0, width + h * dh, t, dh);
        const auto val = in.block(0, 2 * width + h * dh, t, dh);
        const auto dout = go.block(0, h * dh, t, dh);
        g.block(0, 2 * width + h * dh, t, dh).noalias() += p.transpose() * dout;
        Matrix dp = dout * val.transpose();
        // Softmax backward; masked entries have p = 0 and stay 0.
        const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
        Matrix ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * scale;
        g.block(0, h * dh, t, dh).noalias() += ds * k;
        g.block(0, width + h * dh, t, dh).noalias() += ds.transpose() * q;
      }
    };
  }
  return v;
}

Tape::Var Tape::log_softmax(Var logits) {
  Matrix out = value(logits);
  for (Index r = 0; r < out.rows(); ++r) kernels::log_softmax_row(out.row(r).data(), out.cols());
  const Var v = push(std::move(out), needs(logits));
  if (needs(logits)) {
    nodes_.back().back = [this, v, logits] {
      const Node& n = nodes_[static_cast<size_t>(v)];
      const Eigen::VectorXd total = n.grad.rowwise().sum();
      grad(logits).array() += n.grad.array() - (n.value.array().exp().colwise() * total.array());
    };
  }
  return v;
}

Tape::Var Tape::pick(Var m, std::span<const TokenId> cols) {
  const Matrix& vm = value(m);
  if (static_cast<Index>(cols.size()) != vm.rows()) throw Error("pick: one column per row required");
  Matrix out(vm.rows(), 1);
  for (Index r = 0; r < vm.rows(); ++r) {
    const TokenId c = cols[static_cast<size_t>(r)];
    if (c < 0 || c >= vm.cols()) throw Error("pick: column outside matrix");
    out(r, 0) = vm(r, c);
  }
  const Var v = push(std::move(out), needs(m));
  if (needs(m)) {
    std::vector<TokenId> idx(cols.begin(), cols.end());
    nodes_.back().back = [this, v, m, idx = std::move(idx)] {
      const Matrix& go = nodes_[static_cast<size_t>(v)].grad;
      Matrix& g = grad(m);
      for (size_t r = 0; r < idx.size(); ++r) g(static_cast<Index>(r), idx[r]) += go(static_cast<Index>(r), 0);
    };
  }
  return v;
}

void Tape::backward(std::span<const std::pair<Var, Matrix>> seeds) {
  for (const auto& [var, seed] : seeds) {
    const Matrix& val = value(var);
    if (seed.rows() != val.rows() || seed.cols() != val.cols()) throw Error("backward: seed shape mismatch");
    if (needs(var)) grad(var) += seed;
  }
  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.back) n.back();
    if (n.sink != nullptr) *n.sink += n.grad;
  }
}

void Tape::backward(Var scalar) {
  const std::pair<Var, Matrix> seed{scalar, Matrix::Ones(1, 1)};
  backward(std::span<const std::pair<Var, Matrix>>(&seed, 1));
}

}  // namespace rlcf::ad
