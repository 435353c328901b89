#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rlcf/autodiff.hpp"
#include "rlcf/corpus.hpp"

namespace rlcf {

using ad::Matrix;

// Decoder-only pre-LayerNorm transformer shape. Output projection is tied to
// the token embedding.
struct ModelDescriptor {
  std::size_t layers = 2;
  std::size_t width = 128;
  std::size_t heads = 4;
  std::size_t vocab = 0;
  std::size_t context = 512;

  std::size_t ffn_width() const { return 4 * width; }
  bool operator==(const ModelDescriptor&) const = default;
};

// Parameter tensors of one policy. Value semantics: copying gives an
// independent snapshot (the frozen reference is such a copy).
class PolicyParams {
 public:
  PolicyParams() = default;
  static PolicyParams init(const ModelDescriptor& desc, std::uint64_t seed);

  const ModelDescriptor& descriptor() const { return desc_; }
  std::vector<Matrix>& tensors() { return tensors_; }
  const std::vector<Matrix>& tensors() const { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t parameter_count() const;

  std::string version;

  // Content hash over descriptor and every parameter bit.
  std::uint64_t hash() const;
  bool all_finite() const;

  // Zero tensors with the same shapes, for gradients and optimizer moments.
  std::vector<Matrix> zeros_like() const;

  static PolicyParams from_tensors(const ModelDescriptor& desc, std::vector<std::string> names,
                                   std::vector<Matrix> tensors);

  // Tensor slots.
  static constexpr std::size_t kTokenEmbedding = 0;
  static constexpr std::size_t kPositionEmbedding = 1;
  static constexpr std::size_t kFinalGain = 2;
  static constexpr std::size_t kFinalBias = 3;
  static constexpr std::size_t kGlobalCount = 4;
  enum LayerSlot : std::size_t {
    kLn1Gain, kLn1Bias, kQkvWeight, kQkvBias, kOutWeight, kOutBias,
    kLn2Gain, kLn2Bias, kFc1Weight, kFc1Bias, kFc2Weight, kFc2Bias, kLayerSlots
  };
  static std::size_t layer_index(std::size_t layer, LayerSlot slot) {
    return kGlobalCount + layer * kLayerSlots + slot;
  }

 private:
  ModelDescriptor desc_;
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
};

// Output of one recorded forward pass.
struct ForwardGraph {
  ad::Tape::Var hidden = -1;    // T x H, after the final LayerNorm
  ad::Tape::Var logprobs = -1;  // n x 1, log p(targets[i] | tokens[0 .. first_scored + i])
};

// Records the forward pass on tape. Position first_scored + i predicts
// targets[i]. grads may be null for inference.
ForwardGraph record_forward(ad::Tape& tape, const PolicyParams& params, std::vector<Matrix>* grads,
                            std::span<const TokenId> tokens, std::size_t first_scored,
                            std::span<const TokenId> targets);

// Full next-token log-distributions at positions [first, first + count).
Matrix position_log_distributions(const PolicyParams& params, std::span<const TokenId> tokens,
                                  std::size_t first, std::size_t count);

// Key/value cache decoder. step() feeds one token and returns the
// log-distribution over the next token.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const PolicyParams& params);

  Eigen::VectorXd step(TokenId token);
  std::size_t position() const { return pos_; }

 private:
  const PolicyParams& params_;
  std::vector<Matrix> keys_;
  std::vector<Matrix> values_;
  std::size_t pos_ = 0;
};

}  // namespace rlcf
