#pragma once

// Experiment configuration: one JSON document covering sensing, networks,
// every training phase and the synthetic datasets. Unknown keys and invalid
// values are rejected with the dotted field name in the message.

#include <nlohmann/json.hpp>
#include <optional>
#include <set>

#include "sfsci/hash.hpp"
#include "sfsci/learning_fast.hpp"
#include "sfsci/synthetic.hpp"

namespace sfsci {

struct SensingSettings {
  std::size_t shift = 1;
  std::optional<int> shot_bits = 11;  // nullopt: noiseless
  double mask_density = 0.5;
  std::uint64_t mask_seed = 1;
  std::uint64_t target_mask_seed = 1;  // the OOD camera may carry its own mask

  NoiseModel noise() const { return shot_bits ? NoiseModel{ShotNoise{*shot_bits}} : NoiseModel{NoNoise{}}; }
  bool operator==(const SensingSettings&) const = default;
};

struct DataSettings {
  SyntheticConfig source;        // labeled pretraining scenes
  SyntheticConfig distill;       // unlabeled, source domain, unseen by pretraining
  SyntheticConfig target;        // OOD scenes: unlabeled for fast learning, labeled for scoring
  bool operator==(const DataSettings&) const = default;
};

struct WienerSettings {
  std::size_t size = 32;
  std::size_t samples = 2000;
  std::size_t kernel_size = 15;
  double noise_sigma = 0.5;
  double corr_length = 2.0;  // Gaussian spectrum width parameter, pixels
  std::size_t steps = 400;
  double lr = 0.0;  // 0: chosen from the data (1 / max curvature)
  double rho = 2.0;
  bool operator==(const WienerSettings&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  SensingSettings sensing;
  DenoiserConfig denoiser;
  std::size_t teacher_stages = 9;
  std::size_t student_stages = 2;
  TrainConfig train;
  TrainConfig distill;
  SSTConfig sst;
  TTAConfig tta;
  DataSettings data;
  WienerSettings wiener;
  std::string output_dir = "out";
};

// ---------------------------------------------------------------------------
// Presets

inline SyntheticConfig make_domain(std::size_t h, std::size_t w, std::size_t b, bool source, std::size_t count) {
  SyntheticConfig c;
  c.height = h;
  c.width = w;
  c.bands = b;
  c.count = count;
  if (source) {
    c.spatial_smoothness = 3.0;
    c.spectral_rank = 2;
    c.spectral_smoothness = 3.0;
  } else {
    c.spatial_smoothness = 1.5;
    c.spectral_rank = std::min<std::size_t>(6, b);
    c.spectral_smoothness = 0.7;
  }
  return c;
}

/// 64x64x8, d = 1, schedules shortened to run on one CPU core.
inline ExperimentConfig desk_preset() {
  ExperimentConfig c;
  c.sensing.shift = 1;
  c.denoiser = DenoiserConfig{32, 3, true};
  c.train = TrainConfig{60, 2, 1e-3, LrSchedule::cosine_annealing, 0};
  c.distill = TrainConfig{200, 2, 4e-4, LrSchedule::cosine_annealing, 0};
  c.sst.epochs = 100;
  c.sst.lr = 1e-3;
  c.tta.iters = 50;
  c.tta.lr = 1e-3;
  c.data.source = make_domain(64, 64, 8, true, 20);
  c.data.distill = make_domain(64, 64, 8, true, 20);
  c.data.target = make_domain(64, 64, 8, false, 10);
  return c;
}

/// 256x256x28, d = 2, full-size schedules. Far beyond desk budgets.
inline ExperimentConfig paper_geometry_preset() {
  ExperimentConfig c;
  c.sensing.shift = 2;
  c.denoiser = DenoiserConfig{64, 5, true};
  c.train = TrainConfig{300, 2, 4e-4, LrSchedule::cosine_annealing, 0};
  c.distill = TrainConfig{200, 2, 4e-4, LrSchedule::cosine_annealing, 0};
  c.sst.epochs = 100;
  c.sst.lr = 1e-4;
  c.tta.iters = 50;
  c.tta.lr = 1e-3;
  c.tta.transforms.max_shift = 32;
  c.sst.transforms.max_shift = 32;
  c.data.source = make_domain(256, 256, 28, true, 200);
  c.data.distill = make_domain(256, 256, 28, true, 100);
  c.data.target = make_domain(256, 256, 28, false, 10);
  return c;
}

inline ExperimentConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper-geometry") return paper_geometry_preset();
  throw ConfigError("preset must be one of desk, paper-geometry (got '" + name + "')");
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline const char* schedule_name(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine_annealing"; }

inline json transforms_json(const TransformSpec& t) {
  return {{"flip_h", t.flip_h}, {"flip_v", t.flip_v}, {"rot90", t.rot90}, {"shift", t.shift}, {"max_shift", t.max_shift}};
}

inline json synthetic_json(const SyntheticConfig& s) {
  return {{"height", s.height},
          {"width", s.width},
          {"bands", s.bands},
          {"spatial_smoothness", s.spatial_smoothness},
          {"spectral_rank", s.spectral_rank},
          {"spectral_smoothness", s.spectral_smoothness},
          {"count", s.count}};
}

inline json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr_init", t.lr_init},
          {"lr_schedule", schedule_name(t.lr_schedule)}};
}

// Reads a JSON object field by field and remembers which keys were used.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    const std::string name = field(key);
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError(name + " must be a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<V> && std::is_unsigned_v<V>) {
      if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(name + " must be a nonnegative integer");
      out = v.get<V>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer()) throw ConfigError(name + " must be an integer");
      out = v.get<V>();
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError(name + " must be a number");
      out = v.get<V>();
      if (!std::isfinite(out)) throw ConfigError(name + " must be finite");
    } else {
      if (!v.is_string()) throw ConfigError(name + " must be a string");
      out = v.get<V>();
    }
  }

  std::optional<Reader> child(const char* key) {
    used_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Reader(j_.at(key), field(key));
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("unknown config field " + field(it.key().c_str()));
  }

  std::string field(const char* key) const { return path_.empty() ? std::string(key) : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline void read_train(Reader r, TrainConfig& t) {
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("lr_init", t.lr_init);
  std::string s = schedule_name(t.lr_schedule);
  r.get("lr_schedule", s);
  if (s == "constant") {
    t.lr_schedule = LrSchedule::constant;
  } else if (s == "cosine_annealing") {
    t.lr_schedule = LrSchedule::cosine_annealing;
  } else {
    throw ConfigError(r.field("lr_schedule") + " must be 'constant' or 'cosine_annealing'");
  }
  r.finish();
}

inline void read_transforms(Reader r, TransformSpec& t) {
  r.get("flip_h", t.flip_h);
  r.get("flip_v", t.flip_v);
  r.get("rot90", t.rot90);
  r.get("shift", t.shift);
  r.get("max_shift", t.max_shift);
  r.finish();
}

inline void read_synthetic(Reader r, SyntheticConfig& s) {
  r.get("height", s.height);
  r.get("width", s.width);
  r.get("bands", s.bands);
  r.get("spatial_smoothness", s.spatial_smoothness);
  r.get("spectral_rank", s.spectral_rank);
  r.get("spectral_smoothness", s.spectral_smoothness);
  r.get("count", s.count);
  r.finish();
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json sensing{{"shift", c.sensing.shift},
               {"noise", c.sensing.shot_bits ? json{{"type", "shot"}, {"bits", *c.sensing.shot_bits}}
                                             : json{{"type", "none"}}},
               {"mask_density", c.sensing.mask_density},
               {"mask_seed", c.sensing.mask_seed},
               {"target_mask_seed", c.sensing.target_mask_seed}};
  return {{"seed", c.seed},
          {"sensing", sensing},
          {"denoiser", {{"base_channels", c.denoiser.base_channels}, {"depth", c.denoiser.depth}, {"residual", c.denoiser.residual}}},
          {"teacher_stages", c.teacher_stages},
          {"student_stages", c.student_stages},
          {"train", detail::train_json(c.train)},
          {"distill", detail::train_json(c.distill)},
          {"sst",
           {{"w1", c.sst.w1},
            {"w2", c.sst.w2},
            {"w3", c.sst.w3},
            {"epochs", c.sst.epochs},
            {"batch_size", c.sst.batch_size},
            {"lr", c.sst.lr},
            {"ei_loss", c.sst.ei_loss},
            {"transforms", detail::transforms_json(c.sst.transforms)}}},
          {"tta",
           {{"lam", c.tta.lam},
            {"iters", c.tta.iters},
            {"lr", c.tta.lr},
            {"online", c.tta.online},
            {"transforms", detail::transforms_json(c.tta.transforms)}}},
          {"data",
           {{"source", detail::synthetic_json(c.data.source)},
            {"distill", detail::synthetic_json(c.data.distill)},
            {"target", detail::synthetic_json(c.data.target)}}},
          {"wiener",
           {{"size", c.wiener.size},
            {"samples", c.wiener.samples},
            {"kernel_size", c.wiener.kernel_size},
            {"noise_sigma", c.wiener.noise_sigma},
            {"corr_length", c.wiener.corr_length},
            {"steps", c.wiener.steps},
            {"lr", c.wiener.lr},
            {"rho", c.wiener.rho}}},
          {"output_dir", c.output_dir}};
}

/// Checks every cross-field constraint; the message names the field.
inline void validate(const ExperimentConfig& c) {
  if (!(c.sensing.mask_density >= 0 && c.sensing.mask_density <= 1)) {
    throw ConfigError("sensing.mask_density must lie in [0, 1]");
  }
  if (c.sensing.shot_bits && (*c.sensing.shot_bits < 1 || *c.sensing.shot_bits > 52)) {
    throw ConfigError("sensing.noise.bits must lie in [1, 52]");
  }
  c.denoiser.validate();
  if (c.student_stages < 1) throw ConfigError("student_stages must be >= 1");
  if (c.teacher_stages < c.student_stages) throw ConfigError("teacher_stages must be >= student_stages");
  auto check_train = [](const TrainConfig& t, const std::string& w) {
    if (t.epochs < 1) throw ConfigError(w + ".epochs must be >= 1");
    t.validate(w);
  };
  check_train(c.train, "train");
  check_train(c.distill, "distill");
  if (c.sst.w1 < 0) throw ConfigError("sst.w1 must be >= 0");
  if (c.sst.w2 < 0) throw ConfigError("sst.w2 must be >= 0");
  if (c.sst.w3 < 0) throw ConfigError("sst.w3 must be >= 0");
  if (!(c.sst.lr > 0)) throw ConfigError("sst.lr must be > 0");
  if (!LossRegistry<float>::instance().contains(c.sst.ei_loss)) {
    throw ConfigError("sst.ei_loss must name a registered loss (got '" + c.sst.ei_loss + "')");
  }
  if (c.sst.batch_size < 1) throw ConfigError("sst.batch_size must be >= 1");
  if (c.tta.lam < 0) throw ConfigError("tta.lam must be >= 0");
  if (!(c.tta.lr > 0)) throw ConfigError("tta.lr must be > 0");
  if (c.tta.transforms.max_shift < 0) throw ConfigError("tta.transforms.max_shift must be >= 0");
  if (c.sst.transforms.max_shift < 0) throw ConfigError("sst.transforms.max_shift must be >= 0");

  const auto& s = c.data.source;
  for (const auto& [name, d] : {std::pair{"source", &c.data.source}, std::pair{"distill", &c.data.distill},
                                std::pair{"target", &c.data.target}}) {
    const std::string w = std::string("data.") + name;
    d->validate(w);
    if (d->count < 1) throw ConfigError(w + ".count must be >= 1");
    if (d->height != s.height || d->width != s.width || d->bands != s.bands) {
      throw ConfigError(w + ": height, width, bands must match data.source");
    }
  }
  if (c.tta.transforms.rot90 && s.height != s.width) {
    throw ConfigError("tta.transforms.rot90 requires square scenes");
  }
  if (c.sst.transforms.rot90 && s.height != s.width) {
    throw ConfigError("sst.transforms.rot90 requires square scenes");
  }
  const auto& wc = c.wiener;
  if (wc.size < 2) throw ConfigError("wiener.size must be >= 2");
  if (wc.samples < 1) throw ConfigError("wiener.samples must be >= 1");
  if (wc.kernel_size % 2 == 0 || wc.kernel_size > wc.size) {
    throw ConfigError("wiener.kernel_size must be odd and <= wiener.size");
  }
  if (!(wc.noise_sigma >= 0)) throw ConfigError("wiener.noise_sigma must be >= 0");
  if (!(wc.corr_length > 0)) throw ConfigError("wiener.corr_length must be > 0");
  if (wc.lr < 0) throw ConfigError("wiener.lr must be >= 0");
  if (!(wc.rho >= 1)) throw ConfigError("wiener.rho must be >= 1");
  if (c.output_dir.empty()) throw ConfigError("output_dir must be non-empty");
}

/// Overlays `j` onto `base` (normally a preset) and validates the result.
inline ExperimentConfig from_json(const json& j, ExperimentConfig c = desk_preset()) {
  detail::Reader r(j, "");
  r.get("seed", c.seed);
  if (auto s = r.child("sensing")) {
    s->get("shift", c.sensing.shift);
    if (auto n = s->child("noise")) {
      std::string type = c.sensing.shot_bits ? "shot" : "none";
      n->get("type", type);
      int bits = c.sensing.shot_bits.value_or(11);
      n->get("bits", bits);
      if (type == "none") {
        c.sensing.shot_bits.reset();
      } else if (type == "shot") {
        c.sensing.shot_bits = bits;
      } else {
        throw ConfigError("sensing.noise.type must be 'none' or 'shot'");
      }
      n->finish();
    }
    s->get("mask_density", c.sensing.mask_density);
    s->get("mask_seed", c.sensing.mask_seed);
    s->get("target_mask_seed", c.sensing.target_mask_seed);
    s->finish();
  }
  if (auto d = r.child("denoiser")) {
    d->get("base_channels", c.denoiser.base_channels);
    d->get("depth", c.denoiser.depth);
    d->get("residual", c.denoiser.residual);
    d->finish();
  }
  r.get("teacher_stages", c.teacher_stages);
  r.get("student_stages", c.student_stages);
  if (auto t = r.child("train")) detail::read_train(*t, c.train);
  if (auto t = r.child("distill")) detail::read_train(*t, c.distill);
  if (auto s = r.child("sst")) {
    s->get("w1", c.sst.w1);
    s->get("w2", c.sst.w2);
    s->get("w3", c.sst.w3);
    s->get("epochs", c.sst.epochs);
    s->get("batch_size", c.sst.batch_size);
    s->get("lr", c.sst.lr);
    s->get("ei_loss", c.sst.ei_loss);
    if (auto t = s->child("transforms")) detail::read_transforms(*t, c.sst.transforms);
    s->finish();
  }
  if (auto s = r.child("tta")) {
    s->get("lam", c.tta.lam);
    s->get("iters", c.tta.iters);
    s->get("lr", c.tta.lr);
    s->get("online", c.tta.online);
    if (auto t = s->child("transforms")) detail::read_transforms(*t, c.tta.transforms);
    s->finish();
  }
  if (auto d = r.child("data")) {
    if (auto s = d->child("source")) detail::read_synthetic(*s, c.data.source);
    if (auto s = d->child("distill")) detail::read_synthetic(*s, c.data.distill);
    if (auto s = d->child("target")) detail::read_synthetic(*s, c.data.target);
    d->finish();
  }
  if (auto w = r.child("wiener")) {
    w->get("size", c.wiener.size);
    w->get("samples", c.wiener.samples);
    w->get("kernel_size", c.wiener.kernel_size);
    w->get("noise_sigma", c.wiener.noise_sigma);
    w->get("corr_length", c.wiener.corr_length);
    w->get("steps", c.wiener.steps);
    w->get("lr", c.wiener.lr);
    w->get("rho", c.wiener.rho);
    w->finish();
  }
  r.get("output_dir", c.output_dir);
  r.finish();
  validate(c);
  return c;
}

/// sha256 of the canonical JSON of the given sections (output_dir excluded).
inline std::string config_hash(const ExperimentConfig& c, const std::vector<std::string>& sections = {}) {
  json j = to_json(c);
  j.erase("output_dir");
  if (!sections.empty()) {
    json sub = json::object();
    for (const auto& s : sections) {
      // dotted paths select nested objects, e.g. "data.source"
      json* src = &j;
      json* dst = &sub;
      std::size_t pos = 0;
      while (true) {
        const std::size_t dot = s.find('.', pos);
        const std::string key = s.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (!src->contains(key)) throw ConfigError("config_hash: unknown section " + s);
        src = &(*src)[key];
        if (dot == std::string::npos) {
          (*dst)[key] = *src;
          break;
        }
        if (!dst->contains(key)) (*dst)[key] = json::object();
        dst = &(*dst)[key];
        pos = dot + 1;
      }
    }
    j = sub;
  }
  return sha256_hex(j.dump());
}

/// Derives an independent seed for one pipeline component.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace sfsci
