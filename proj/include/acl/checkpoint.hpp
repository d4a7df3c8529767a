#ifndef ACL_CHECKPOINT_HPP
#define ACL_CHECKPOINT_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "acl/io.hpp"
#include "acl/model.hpp"

namespace acl {

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels}, {"resolution", c.resolution}, {"widths", c.widths},
                     {"proj_dim", c.proj_dim},       {"num_classes", c.num_classes}, {"dual_bn", c.dual_bn},
                     {"bn_momentum", c.bn_momentum}, {"bn_eps", c.bn_eps}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.in_channels = j.value("in_channels", c.in_channels);
  c.resolution = j.value("resolution", c.resolution);
  c.widths = j.value("widths", c.widths);
  c.proj_dim = j.value("proj_dim", c.proj_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.dual_bn = j.value("dual_bn", c.dual_bn);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
}

/// Named-tensor store plus string metadata.
///
/// Layout (little-endian): "ACLF", u32 version, u32 metadata count, then
/// (u32 len, key, u32 len, value) pairs, u32 tensor count, then per tensor
/// u32 name length, utf-8 name, u32 rank, u32 dims[rank], f32 data.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }

  std::vector<unsigned char> serialize() const {
    ByteWriter w;
    w.raw("ACLF");
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      w.str(k);
      w.str(v);
    }
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      w.str(name);
      w.u32(static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
      for (float v : t.values()) w.f32(v);
    }
    return w.bytes();
  }
};

namespace detail {

inline void read_checkpoint_header(ByteReader& r, std::map<std::string, std::string>& meta) {
  if (r.raw(4) != "ACLF") throw FormatError("checkpoint: bad magic (expected ACLF)");
  const auto version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version) + " (this build reads " +
                      std::to_string(Checkpoint::kVersion) + ")");
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto k = r.str();
    meta[k] = r.str(1u << 26);
  }
}

inline Shape read_tensor_shape(ByteReader& r) {
  const auto rank = r.u32();
  if (rank > 8) throw FormatError("checkpoint: rank " + std::to_string(rank) + " at offset " + std::to_string(r.offset() - 4));
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  return shape;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  atomic_write(path, ckpt.serialize());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  ByteReader r(in);
  Checkpoint ckpt;
  detail::read_checkpoint_header(r, ckpt.meta);
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    Shape shape = detail::read_tensor_shape(r);
    std::vector<float> data(numel_of(shape));
    for (auto& v : data) v = r.f32();
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes after offset " + std::to_string(r.offset()));
  return ckpt;
}

struct TensorEntry {
  std::string name;
  Shape shape;
};

/// Metadata and tensor directory without reading tensor data.
inline std::pair<std::map<std::string, std::string>, std::vector<TensorEntry>> scan_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("scan_checkpoint: cannot open " + path.string());
  ByteReader r(in);
  std::map<std::string, std::string> meta;
  detail::read_checkpoint_header(r, meta);
  std::vector<TensorEntry> entries;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry e;
    e.name = r.str();
    e.shape = detail::read_tensor_shape(r);
    r.skip(4ULL * numel_of(e.shape));
    entries.push_back(std::move(e));
  }
  return {meta, entries};
}

/// Snapshot of every state tensor plus the encoder configuration needed to
/// rebuild the model and a digest of that configuration. Tensors under
/// "head." are flagged non-essential.
inline Checkpoint model_checkpoint(const Model& model, std::map<std::string, std::string> meta = {}) {
  Checkpoint c;
  c.meta = std::move(meta);
  c.meta["encoder_config"] = nlohmann::json(model.config()).dump();
  c.meta["config_digest"] = hex64(fnv1a64(c.meta["encoder_config"]));
  c.meta["init_seed"] = std::to_string(model.seed());
  c.meta["non_essential_prefix"] = "head.";
  for (const auto& [name, t] : model.state()) c.tensors.emplace_back(name, t.detach());
  return c;
}

inline Model model_from_checkpoint(const Checkpoint& ckpt) {
  auto it = ckpt.meta.find("encoder_config");
  if (it == ckpt.meta.end()) throw FormatError("checkpoint: missing encoder_config metadata");
  if (auto d = ckpt.meta.find("config_digest"); d != ckpt.meta.end() && d->second != hex64(fnv1a64(it->second))) {
    throw FormatError("checkpoint: encoder_config does not match its digest " + d->second);
  }
  EncoderConfig cfg = nlohmann::json::parse(it->second).get<EncoderConfig>();
  std::uint64_t seed = 0;
  if (auto s = ckpt.meta.find("init_seed"); s != ckpt.meta.end()) seed = std::stoull(s->second);
  Model model(cfg, seed);
  model.load_state(ckpt.tensors);
  return model;
}

}  // namespace acl

#endif  // ACL_CHECKPOINT_HPP
