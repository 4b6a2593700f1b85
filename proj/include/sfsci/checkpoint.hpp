#pragma once

// Checkpoints: `<stem>.json` manifest plus `<stem>.bin` holding every
// parameter as little-endian float32, concatenated in manifest order.

#include "sfsci/adapters.hpp"
#include "sfsci/cube_io.hpp"

namespace sfsci {

inline constexpr int kCheckpointSchema = 1;

/// Metadata recorded alongside the weights.
struct CheckpointMeta {
  std::string config_hash;   // whole experiment config
  std::string lineage_hash;  // config sections that produced these weights
  std::string producer;      // command that wrote the checkpoint
};

inline fs::path checkpoint_manifest_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }
inline fs::path checkpoint_blob_path(const fs::path& stem) { return fs::path(stem.string() + ".bin"); }

template <typename T>
json architecture(const UnfoldingModel<T>& m, std::size_t adapters = 0) {
  return {{"shift", m.shift},
          {"bands", m.bands},
          {"stages", m.num_stages()},
          {"adapters", adapters},
          {"denoiser", {{"base_channels", m.denoiser_cfg.base_channels}, {"depth", m.denoiser_cfg.depth}, {"residual", m.denoiser_cfg.residual}}}};
}

namespace detail {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Parameter<T>*>>;

template <typename T>
NamedParams<T> named_parameters(UnfoldingModel<T>& m) {
  NamedParams<T> out;
  m.visit_parameters([&](const std::string& n, Parameter<T>& p) { out.emplace_back(n, &p); });
  return out;
}

template <typename T>
NamedParams<T> named_parameters(AdaptedModel<T>& m) {
  auto out = named_parameters(m.backbone);
  m.visit_adapter_parameters([&](const std::string& n, Parameter<T>& p) { out.emplace_back(n, &p); });
  return out;
}

inline std::string arch_hash(const json& arch, const json& modules) {
  json shapes = json::array();
  for (const auto& m : modules) shapes.push_back({m["name"], m["shape"]});
  return sha256_hex(json{{"arch", arch}, {"shapes", shapes}}.dump());
}

template <typename T>
void write_checkpoint(const fs::path& stem, NamedParams<T> params, const json& arch, const CheckpointMeta& meta) {
  std::vector<std::uint8_t> blob;
  json modules = json::array();
  json frozen = json::object();
  for (auto& [name, p] : params) {
    const auto bytes = encode_f32le<T>(p->value().span());
    modules.push_back({{"name", name},
                       {"shape", p->value().shape()},
                       {"offset", blob.size()},
                       {"count", p->size()},
                       {"sha256", sha256_hex(bytes)}});
    frozen[name] = p->frozen();
    blob.insert(blob.end(), bytes.begin(), bytes.end());
  }
  const fs::path bin = checkpoint_blob_path(stem);
  write_bytes(bin, blob);
  write_json(checkpoint_manifest_path(stem), json{{"schema_version", kCheckpointSchema},
                                                  {"producer", meta.producer},
                                                  {"config_hash", meta.config_hash},
                                                  {"lineage_hash", meta.lineage_hash},
                                                  {"arch", arch},
                                                  {"arch_hash", arch_hash(arch, modules)},
                                                  {"blob", bin.filename().string()},
                                                  {"blob_sha256", sha256_hex(blob)},
                                                  {"modules", modules},
                                                  {"frozen_flags", frozen}});
}

inline json read_checkpoint_manifest(const fs::path& stem) {
  const fs::path mp = checkpoint_manifest_path(stem);
  if (!fs::exists(mp)) throw IoError("missing checkpoint " + mp.string());
  json m = read_json(mp);
  for (const char* f : {"schema_version", "arch", "arch_hash", "modules", "frozen_flags", "blob_sha256", "lineage_hash"}) {
    if (!m.contains(f)) throw IoError(std::string("checkpoint field '") + f + "' missing in " + mp.string());
  }
  if (m["schema_version"] != kCheckpointSchema) {
    throw IoError("checkpoint field 'schema_version' unsupported in " + mp.string());
  }
  return m;
}

template <typename T>
void read_checkpoint(const fs::path& stem, NamedParams<T> params, const json& expected_arch) {
  const json m = read_checkpoint_manifest(stem);
  if (m["arch"] != expected_arch) {
    throw ConfigError("checkpoint " + stem.string() + " has architecture " + m["arch"].dump() +
                      ", config expects " + expected_arch.dump());
  }
  const json& modules = m["modules"];
  if (modules.size() != params.size()) throw ConfigError("checkpoint module count does not match model");
  json expected_modules = json::array();
  for (auto& [name, p] : params) expected_modules.push_back({{"name", name}, {"shape", p->value().shape()}});
  if (detail::arch_hash(expected_arch, expected_modules) != m["arch_hash"]) {
    throw ConfigError("checkpoint field 'arch_hash' does not match the configured model");
  }
  const auto blob = read_bytes(checkpoint_blob_path(stem));
  if (sha256_hex(blob) != m["blob_sha256"]) throw IoError("checkpoint field 'blob_sha256' does not match blob");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& e = modules[i];
    auto& [name, p] = params[i];
    const std::size_t off = e["offset"], cnt = e["count"];
    if (e["name"] != name || cnt != p->size() || off + 4 * cnt > blob.size()) {
      throw IoError("checkpoint module '" + e["name"].get<std::string>() + "' does not match model entry '" + name + "'");
    }
    std::span<const std::uint8_t> bytes(blob.data() + off, 4 * cnt);
    if (sha256_hex(bytes) != e["sha256"]) throw IoError("checkpoint module '" + name + "' field 'sha256' mismatch");
    p->mutable_value() = Tensor<T>(p->value().shape(), decode_f32le<T>(bytes));
    p->set_frozen(m["frozen_flags"].value(name, false));
  }
}

}  // namespace detail

template <typename T>
void save_checkpoint(const fs::path& stem, const UnfoldingModel<T>& model, const CheckpointMeta& meta = {}) {
  auto copy = model;
  detail::write_checkpoint<T>(stem, detail::named_parameters(copy), architecture(model), meta);
}

template <typename T>
void save_checkpoint(const fs::path& stem, const AdaptedModel<T>& model, const CheckpointMeta& meta = {}) {
  auto copy = model;
  detail::write_checkpoint<T>(stem, detail::named_parameters(copy), architecture(model.backbone, model.adapters.size()), meta);
}

/// Loads weights into a model of the given architecture. Any difference in
/// geometry, denoiser or stage count is rejected.
template <typename T>
UnfoldingModel<T> load_unfolding_checkpoint(const fs::path& stem, const DenoiserConfig& cfg, std::size_t stages,
                                            std::size_t shift, std::size_t bands) {
  auto model = make_unfolding_model<T>(cfg, stages, shift, bands, 0);
  detail::read_checkpoint<T>(stem, detail::named_parameters(model), architecture(model));
  return model;
}

template <typename T>
AdaptedModel<T> load_adapted_checkpoint(const fs::path& stem, const DenoiserConfig& cfg, std::size_t stages,
                                        std::size_t shift, std::size_t bands) {
  auto model = attach_adapters(make_unfolding_model<T>(cfg, stages, shift, bands, 0));
  detail::read_checkpoint<T>(stem, detail::named_parameters(model), architecture(model.backbone, model.adapters.size()));
  return model;
}

inline CheckpointMeta checkpoint_meta(const fs::path& stem) {
  const json m = detail::read_checkpoint_manifest(stem);
  return {m.value("config_hash", ""), m.value("lineage_hash", ""), m.value("producer", "")};
}

}  // namespace sfsci
