#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rlcf/corpus.hpp"
#include "rlcf/transformer.hpp"

namespace rlcf {

// Flat binary archive of named dense tensors.
void save_tensor_archive(const std::filesystem::path& path, const std::vector<std::string>& names,
                         const std::vector<Matrix>& tensors);
void load_tensor_archive(const std::filesystem::path& path, std::vector<std::string>& names,
                         std::vector<Matrix>& tensors);

struct CheckpointManifest {
  ModelDescriptor model;
  std::string tokenizer_hash;
  std::string version;
  std::vector<std::uint64_t> seed_lineage;
  std::string params_hash;
};

// Directory layout: manifest.json, params.bin, vocab.json.
void save_checkpoint(const std::filesystem::path& dir, const PolicyParams& params, const TokenizerSpec& tokenizer,
                     const std::vector<std::uint64_t>& seed_lineage);

CheckpointManifest read_manifest(const std::filesystem::path& dir);

// Loads and verifies the manifest against the runtime tokenizer (if given)
// and the stored parameter hash.
PolicyParams load_checkpoint(const std::filesystem::path& dir, const TokenizerSpec* runtime_tokenizer = nullptr);

}  // namespace rlcf
