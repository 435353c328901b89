#include "rlcf/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "rlcf/error.hpp"
#include "rlcf/text.hpp"

namespace rlcf {

namespace {

constexpr char kMagic[8] = {'R', 'L', 'C', 'F', 'T', 'N', 'S', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("truncated tensor archive");
  return v;
}

}  // namespace

void save_tensor_archive(const std::filesystem::path& path, const std::vector<std::string>& names,
                         const std::vector<Matrix>& tensors) {
  if (names.size() != tensors.size()) throw Error("tensor archive: name/tensor count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint64_t>(out, tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    write_pod<std::uint64_t>(out, names[i].size());
    out.write(names[i].data(), static_cast<std::streamsize>(names[i].size()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(tensors[i].rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(tensors[i].cols()));
    out.write(reinterpret_cast<const char*>(tensors[i].data()),
              static_cast<std::streamsize>(tensors[i].size() * static_cast<Eigen::Index>(sizeof(double))));
  }
  if (!out) throw Error(ErrorKind::kConfig, "failed writing " + path.string());
}

void load_tensor_archive(const std::filesystem::path& path, std::vector<std::string>& names,
                         std::vector<Matrix>& tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "cannot read " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw Error(path.string() + " is not a tensor archive");
  const auto count = read_pod<std::uint64_t>(in);
  names.clear();
  tensors.clear();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint64_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    const auto rows = read_pod<std::uint64_t>(in);
    const auto cols = read_pod<std::uint64_t>(in);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)));
    if (!in) throw Error("truncated tensor archive " + path.string());
    names.push_back(std::move(name));
    tensors.push_back(std::move(m));
  }
}

void save_checkpoint(const std::filesystem::path& dir, const PolicyParams& params, const TokenizerSpec& tokenizer,
                     const std::vector<std::uint64_t>& seed_lineage) {
  std::filesystem::create_directories(dir);
  const auto& d = params.descriptor();
  nlohmann::ordered_json m;
  m["model"] = {{"layers", d.layers}, {"width", d.width}, {"heads", d.heads}, {"vocab", d.vocab},
                {"context", d.context}};
  m["tokenizer_hash"] = hex64(tokenizer.hash());
  m["version"] = params.version;
  m["seed_lineage"] = seed_lineage;
  m["params_hash"] = hex64(params.hash());
  save_tensor_archive(dir / "params.bin", params.names(), params.tensors());
  tokenizer.save(dir / "vocab.json");
  // Manifest last so a partially written directory is never mistaken for a checkpoint.
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error(ErrorKind::kConfig, "cannot write checkpoint manifest in " + dir.string());
  out << m.dump(2) << '\n';
}

CheckpointManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorKind::kMissingArtifact, "no checkpoint manifest in " + dir.string());
  try {
    const auto j = nlohmann::json::parse(in);
    CheckpointManifest m;
    const auto& model = j.at("model");
    m.model.layers = model.at("layers").get<std::size_t>();
    m.model.width = model.at("width").get<std::size_t>();
    m.model.heads = model.at("heads").get<std::size_t>();
    m.model.vocab = model.at("vocab").get<std::size_t>();
    m.model.context = model.at("context").get<std::size_t>();
    m.tokenizer_hash = j.at("tokenizer_hash").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.seed_lineage = j.at("seed_lineage").get<std::vector<std::uint64_t>>();
    m.params_hash = j.at("params_hash").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
}

PolicyParams load_checkpoint(const std::filesystem::path& dir, const TokenizerSpec* runtime_tokenizer) {
  const CheckpointManifest m = read_manifest(dir);
  if (runtime_tokenizer != nullptr && hex64(runtime_tokenizer->hash()) != m.tokenizer_hash) {
    throw Error(ErrorKind::kConfig, "checkpoint " + dir.string() + " was trained with tokenizer " +
                                        m.tokenizer_hash + " but the runtime tokenizer hashes to " +
                                        hex64(runtime_tokenizer->hash()));
  }
  std::vector<std::string> names;
  std::vector<Matrix> tensors;
  load_tensor_archive(dir / "params.bin", names, tensors);
  PolicyParams p = PolicyParams::from_tensors(m.model, std::move(names), std::move(tensors));
  p.version = m.version;
  if (hex64(p.hash()) != m.params_hash) throw Error("checkpoint " + dir.string() + " parameter hash mismatch");
  return p;
}

}  // namespace rlcf
