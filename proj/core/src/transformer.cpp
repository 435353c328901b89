#include "rlcf/transformer.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "rlcf/error.hpp"
#include "rlcf/text.hpp"

namespace rlcf {

namespace {

using ad::Index;
using Var = ad::Tape::Var;

Matrix normal_matrix(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

struct Recorded {
  Var hidden = -1;
  Var log_dist = -1;
  Var token_table = -1;
};

Recorded record(ad::Tape& tape, const PolicyParams& params, std::vector<Matrix>* grads,
                std::span<const TokenId> tokens, std::size_t first, std::size_t count) {
  const auto& desc = params.descriptor();
  const auto& w = params.tensors();
  if (tokens.empty()) throw Error("forward pass needs at least one token");
  if (tokens.size() > desc.context) {
    throw Error("sequence of " + std::to_string(tokens.size()) + " tokens exceeds context " +
                std::to_string(desc.context));
  }
  if (first + count > tokens.size()) throw Error("scored positions outside sequence");

  auto p = [&](std::size_t i) { return tape.param(w[i], grads != nullptr ? &(*grads)[i] : nullptr); };
  const auto t = static_cast<Index>(tokens.size());

  Recorded out;
  out.token_table = p(PolicyParams::kTokenEmbedding);
  Var x = tape.add(tape.gather_rows(out.token_table, tokens),
                   tape.gather_range(p(PolicyParams::kPositionEmbedding), 0, t));
  for (std::size_t l = 0; l < desc.layers; ++l) {
    auto slot = [&](PolicyParams::LayerSlot s) { return p(PolicyParams::layer_index(l, s)); };
    Var h = tape.layer_norm(x, slot(PolicyParams::kLn1Gain), slot(PolicyParams::kLn1Bias));
    Var qkv = tape.add_row(tape.matmul(h, slot(PolicyParams::kQkvWeight)), slot(PolicyParams::kQkvBias));
    Var att = tape.causal_attention(qkv, static_cast<int>(desc.heads));
    Var proj = tape.add_row(tape.matmul(att, slot(PolicyParams::kOutWeight)), slot(PolicyParams::kOutBias));
    x = tape.add(x, proj);
    Var h2 = tape.layer_norm(x, slot(PolicyParams::kLn2Gain), slot(PolicyParams::kLn2Bias));
    Var f = tape.gelu(tape.add_row(tape.matmul(h2, slot(PolicyParams::kFc1Weight)), slot(PolicyParams::kFc1Bias)));
    Var f2 = tape.add_row(tape.matmul(f, slot(PolicyParams::kFc2Weight)), slot(PolicyParams::kFc2Bias));
    x = tape.add(x, f2);
  }
  out.hidden = tape.layer_norm(x, p(PolicyParams::kFinalGain), p(PolicyParams::kFinalBias));
  if (count > 0) {
    Var sel = tape.slice_rows(out.hidden, static_cast<Index>(first), static_cast<Index>(count));
    out.log_dist = tape.log_softmax(tape.matmul_transposed(sel, out.token_table));
  }
  return out;
}

}  // namespace

PolicyParams PolicyParams::init(const ModelDescriptor& desc, std::uint64_t seed) {
  if (desc.layers == 0 || desc.width == 0 || desc.heads == 0 || desc.vocab == 0 || desc.context == 0) {
    throw Error("model descriptor fields must be positive");
  }
  if (desc.width % desc.heads != 0) throw Error("width must be divisible by heads");
  const auto h = static_cast<Index>(desc.width);
  const auto f = static_cast<Index>(desc.ffn_width());
  const double resid_std = 0.02 / std::sqrt(2.0 * static_cast<double>(desc.layers));
  std::mt19937_64 rng(seed);

  std::vector<std::string> names;
  std::vector<Matrix> t;
  auto add = [&](std::string name, Matrix m) {
    names.push_back(std::move(name));
    t.push_back(std::move(m));
  };
  add("token_embedding", normal_matrix(static_cast<Index>(desc.vocab), h, 0.02, rng));
  add("position_embedding", normal_matrix(static_cast<Index>(desc.context), h, 0.01, rng));
  add("final_ln.gain", Matrix::Ones(1, h));
  add("final_ln.bias", Matrix::Zero(1, h));
  for (std::size_t l = 0; l < desc.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    add(pre + "ln1.gain", Matrix::Ones(1, h));
    add(pre + "ln1.bias", Matrix::Zero(1, h));
    add(pre + "qkv.weight", normal_matrix(h, 3 * h, 0.02, rng));
    add(pre + "qkv.bias", Matrix::Zero(1, 3 * h));
    add(pre + "out.weight", normal_matrix(h, h, resid_std, rng));
    add(pre + "out.bias", Matrix::Zero(1, h));
    add(pre + "ln2.gain", Matrix::Ones(1, h));
    add(pre + "ln2.bias", Matrix::Zero(1, h));
    add(pre + "fc1.weight", normal_matrix(h, f, 0.02, rng));
    add(pre + "fc1.bias", Matrix::Zero(1, f));
    add(pre + "fc2.weight", normal_matrix(f, h, resid_std, rng));
    add(pre + "fc2.bias", Matrix::Zero(1, h));
  }
  PolicyParams p = from_tensors(desc, std::move(names), std::move(t));
  p.version = "init-seed" + std::to_string(seed);
  return p;
}

PolicyParams PolicyParams::from_tensors(const ModelDescriptor& desc, std::vector<std::string> names,
                                        std::vector<Matrix> tensors) {
  const std::size_t expected = kGlobalCount + desc.layers * kLayerSlots;
  if (tensors.size() != expected || names.size() != expected) {
    throw Error("expected " + std::to_string(expected) + " parameter tensors, got " +
                std::to_string(tensors.size()));
  }
  const auto h = static_cast<Index>(desc.width);
  if (tensors[kTokenEmbedding].rows() != static_cast<Index>(desc.vocab) || tensors[kTokenEmbedding].cols() != h ||
      tensors[kPositionEmbedding].rows() != static_cast<Index>(desc.context)) {
    throw Error("parameter shapes do not match the model descriptor");
  }
  PolicyParams p;
  p.desc_ = desc;
  p.names_ = std::move(names);
  p.tensors_ = std::move(tensors);
  return p;
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

std::uint64_t PolicyParams::hash() const {
  std::uint64_t h = fnv1a64("policy");
  for (const std::size_t v : {desc_.layers, desc_.width, desc_.heads, desc_.vocab, desc_.context}) {
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&v), sizeof(v)), h);
  }
  for (const auto& t : tensors_) {
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data()),
                                 static_cast<std::size_t>(t.size()) * sizeof(double)),
                h);
  }
  return h;
}

bool PolicyParams::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.allFinite()) return false;
  }
  return true;
}

std::vector<Matrix> PolicyParams::zeros_like() const {
  std::vector<Matrix> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.push_back(Matrix::Zero(t.rows(), t.cols()));
  return out;
}

ForwardGraph record_forward(ad::Tape& tape, const PolicyParams& params, std::vector<Matrix>* grads,
                            std::span<const TokenId> tokens, std::size_t first_scored,
                            std::span<const TokenId> targets) {
  const Recorded r = record(tape, params, grads, tokens, first_scored, targets.size());
  ForwardGraph g;
  g.hidden = r.hidden;
  if (!targets.empty()) g.logprobs = tape.pick(r.log_dist, targets);
  return g;
}

Matrix position_log_distributions(const PolicyParams& params, std::span<const TokenId> tokens,
                                  std::size_t first, std::size_t count) {
  if (count == 0) return Matrix(0, static_cast<Index>(params.descriptor().vocab));
  ad::Tape tape;
  const Recorded r = record(tape, params, nullptr, tokens, first, count);
  return tape.value(r.log_dist);
}

IncrementalDecoder::IncrementalDecoder(const PolicyParams& params) : params_(params) {
  const auto& d = params.descriptor();
  for (std::size_t l = 0; l < d.layers; ++l) {
    keys_.emplace_back(static_cast<Index>(d.context), static_cast<Index>(d.width));
    values_.emplace_back(static_cast<Index>(d.context), static_cast<Index>(d.width));
  }
}

Eigen::VectorXd IncrementalDecoder::step(TokenId token) {
  const auto& d = params_.descriptor();
  const auto& w = params_.tensors();
  if (pos_ >= d.context) throw Error("decoder exceeded context length " + std::to_string(d.context));
  if (token < 0 || static_cast<std::size_t>(token) >= d.vocab) throw Error("token id outside vocabulary");

  const auto h = static_cast<Index>(d.width);
  const auto heads = static_cast<Index>(d.heads);
  const Index dh = h / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto pos = static_cast<Index>(pos_);

  using Row = Eigen::Matrix<double, 1, Eigen::Dynamic>;
  Row x = w[PolicyParams::kTokenEmbedding].row(token) + w[PolicyParams::kPositionEmbedding].row(pos);
  Row normed(h);
  for (std::size_t l = 0; l < d.layers; ++l) {
    auto W = [&](PolicyParams::LayerSlot s) -> const Matrix& { return w[PolicyParams::layer_index(l, s)]; };
    ad::kernels::layer_norm_row(x.data(), W(PolicyParams::kLn1Gain).data(), W(PolicyParams::kLn1Bias).data(), h,
                                normed.data());
    Row qkv = normed * W(PolicyParams::kQkvWeight);
    qkv += W(PolicyParams::kQkvBias).row(0);
    keys_[l].row(pos) = qkv.segment(h, h);
    values_[l].row(pos) = qkv.segment(2 * h, h);

    Row att(h);
    Eigen::VectorXd s(pos + 1);
    for (Index hd = 0; hd < heads; ++hd) {
      const auto q = qkv.segment(hd * dh, dh);
      double mx = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j <= pos; ++j) {
        s[j] = q.dot(keys_[l].row(j).segment(hd * dh, dh)) * scale;
        mx = std::max(mx, s[j]);
      }
      double sum = 0.0;
      for (Index j = 0; j <= pos; ++j) {
        s[j] = std::exp(s[j] - mx);
        sum += s[j];
      }
      auto o = att.segment(hd * dh, dh);
      o.setZero();
      for (Index j = 0; j <= pos; ++j) o += (s[j] / sum) * values_[l].row(j).segment(hd * dh, dh);
    }
    Row proj = att * W(PolicyParams::kOutWeight);
    x += proj + W(PolicyParams::kOutBias).row(0);

    ad::kernels::layer_norm_row(x.data(), W(PolicyParams::kLn2Gain).data(), W(PolicyParams::kLn2Bias).data(), h,
                                normed.data());
    Row f = normed * W(PolicyParams::kFc1Weight);
    f += W(PolicyParams::kFc1Bias).row(0);
    f = f.unaryExpr([](double z) { return ad::kernels::gelu(z); });
    Row f2 = f * W(PolicyParams::kFc2Weight);
    x += f2 + W(PolicyParams::kFc2Bias).row(0);
  }
  ad::kernels::layer_norm_row(x.data(), w[PolicyParams::kFinalGain].data(), w[PolicyParams::kFinalBias].data(), h,
                              normed.data());
  Eigen::VectorXd logits = w[PolicyParams::kTokenEmbedding] * normed.transpose();
  ad::kernels::log_softmax_row(logits.data(), logits.size());
  ++pos_;
  return logits;
}

}  // namespace rlcf
