#pragma once

// Pipeline commands shared by the CLI and the tests. Every command reads the
// artifacts of its upstream command from the output directory, checks that
// they were produced under the same configuration sections, and writes its
// own artifacts next to them.

#include <chrono>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <iostream>

#include "sfsci/checkpoint.hpp"
#include "sfsci/config.hpp"
#include "sfsci/wiener.hpp"

namespace sfsci {

using Real = float;

/// An upstream artifact is absent; the message names the command to run.
class MissingArtifact : public IoError {
 public:
  using IoError::IoError;
};

struct RunContext {
  ExperimentConfig cfg;
  fs::path out;
  std::ostream* log = &std::clog;

  RunContext(ExperimentConfig c, fs::path o, std::ostream* l = &std::clog) : cfg(std::move(c)), out(std::move(o)), log(l) {}
  explicit RunContext(ExperimentConfig c) : cfg(std::move(c)), out(cfg.output_dir) {}

  std::ostream& os() const { return *log; }
};

// ---------------------------------------------------------------------------
// Layout, seeds and lineage

namespace layout {
inline fs::path data(const RunContext& c, const std::string& set) { return c.out / "data" / set; }
inline fs::path mask(const RunContext& c) { return c.out / "data" / "mask.cube"; }
inline fs::path target_mask(const RunContext& c) { return c.out / "data" / "target_mask.cube"; }
inline fs::path checkpoint(const RunContext& c, const std::string& name) { return c.out / "checkpoints" / name; }
}  // namespace layout

enum class DataSet { source, distill, target };

inline const char* set_name(DataSet s) {
  switch (s) {
    case DataSet::source: return "source";
    case DataSet::distill: return "distill";
    case DataSet::target: return "target";
  }
  return "";
}

inline DataSet parse_set(const std::string& s) {
  for (auto d : {DataSet::source, DataSet::distill, DataSet::target})
    if (s == set_name(d)) return d;
  throw ConfigError("dataset must be one of source, distill, target (got '" + s + "')");
}

inline bool is_target(DataSet s) { return s == DataSet::target; }

inline const SyntheticConfig& set_config(const ExperimentConfig& c, DataSet s) {
  switch (s) {
    case DataSet::source: return c.data.source;
    case DataSet::distill: return c.data.distill;
    default: return c.data.target;
  }
}

namespace salt {
inline constexpr std::uint64_t data = 1, noise = 10, teacher_init = 20, train = 21, student_init = 30, distill = 31,
                               adapter_init = 40, sst = 41, tta = 50, wiener = 60;
}

inline std::vector<std::string> data_sections() { return {"seed", "sensing", "data"}; }
inline std::vector<std::string> teacher_sections() {
  return {"seed", "sensing", "data.source", "denoiser", "teacher_stages", "train"};
}
inline std::vector<std::string> student_sections() {
  auto s = teacher_sections();
  for (const char* x : {"data.distill", "student_stages", "distill"}) s.push_back(x);
  return s;
}
inline std::vector<std::string> adapted_sections() {
  auto s = student_sections();
  for (const char* x : {"data.target", "sst"}) s.push_back(x);
  return s;
}

struct Producer {
  std::string checkpoint;
  std::string command;
  std::vector<std::string> sections;
};

inline Producer producer_of(const std::string& model) {
  if (model == "teacher") return {"teacher", "train-slow", teacher_sections()};
  if (model == "student") return {"student", "distill", student_sections()};
  if (model == "adapted") return {"adapted", "train-adapters", adapted_sections()};
  throw ConfigError("model must be one of teacher, student, adapted (got '" + model + "')");
}

// ---------------------------------------------------------------------------
// Small writers

inline void write_csv(const fs::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows, const std::string& config_hash) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "# config_hash=" << config_hash << '\n';
  for (std::size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
  f << '\n' << std::setprecision(10);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) f << (i ? "," : "") << r[i];
    f << '\n';
  }
}

inline json report_json(const MetricsReport& r) {
  json scenes = json::array();
  for (const auto& s : r.per_scene) scenes.push_back({{"psnr", s.psnr}, {"ssim", s.ssim}});
  return {{"per_scene", scenes}, {"mean_psnr", r.mean_psnr}, {"mean_ssim", r.mean_ssim}};
}

inline void write_output_json(const RunContext& ctx, const fs::path& path, json j) {
  j["config_hash"] = config_hash(ctx.cfg);
  write_json(path, j);
}

// ---------------------------------------------------------------------------
// Data access

inline CodedMask mask_for(const RunContext& ctx, DataSet s) {
  const fs::path p = is_target(s) ? layout::target_mask(ctx) : layout::mask(ctx);
  if (!fs::exists(p)) throw MissingArtifact("missing " + p.string() + "; run `gen-data` first");
  return load_mask(p);
}

inline void check_lineage(const std::string& recorded, const std::vector<std::string>& sections, const RunContext& ctx,
                          const std::string& what, const std::string& command) {
  if (recorded != config_hash(ctx.cfg, sections)) {
    throw ConfigError(what + " was produced under a different configuration; rerun `" + command + "`");
  }
}

inline std::vector<HyperspectralCube<Real>> load_set(const RunContext& ctx, DataSet s) {
  const fs::path dir = layout::data(ctx, set_name(s));
  if (!fs::exists(dir / "manifest.json")) {
    throw MissingArtifact("missing dataset " + dir.string() + "; run `gen-data` first");
  }
  const json m = read_json(dir / "manifest.json");
  check_lineage(m.value("lineage_hash", ""), data_sections(), ctx, "dataset " + dir.string(), "gen-data");
  return load_dataset<Real>(dir);
}

/// Noisy snapshots of a set; the noise stream is fixed per (seed, set, index).
inline std::vector<Measurement<Real>> measure_set(const RunContext& ctx, DataSet s,
                                                  const std::vector<HyperspectralCube<Real>>& cubes,
                                                  const CodedMask& mask) {
  std::vector<Measurement<Real>> out;
  const std::uint64_t base = derive_seed(ctx.cfg.seed, salt::noise + static_cast<std::uint64_t>(s));
  for (std::size_t i = 0; i < cubes.size(); ++i) {
    auto y = forward(cubes[i], mask, ctx.cfg.sensing.shift);
    out.push_back(add_noise(y, SensingConfig{ctx.cfg.sensing.shift, ctx.cfg.sensing.noise(), derive_seed(base, i)}));
  }
  return out;
}

struct LabeledSet {
  std::vector<HyperspectralCube<Real>> cubes;
  std::vector<Measurement<Real>> ys;
  CodedMask mask;
};

inline LabeledSet load_measured(const RunContext& ctx, DataSet s) {
  LabeledSet l;
  l.cubes = load_set(ctx, s);
  l.mask = mask_for(ctx, s);
  l.ys = measure_set(ctx, s, l.cubes, l.mask);
  return l;
}

// ---------------------------------------------------------------------------
// Checkpoint access

inline UnfoldingModel<Real> load_backbone(const RunContext& ctx, const std::string& which) {
  const Producer p = producer_of(which);
  const fs::path stem = layout::checkpoint(ctx, p.checkpoint);
  if (!fs::exists(checkpoint_manifest_path(stem))) {
    throw MissingArtifact("missing checkpoint " + checkpoint_manifest_path(stem).string() + "; run `" + p.command + "` first");
  }
  check_lineage(checkpoint_meta(stem).lineage_hash, p.sections, ctx, "checkpoint " + p.checkpoint, p.command);
  const std::size_t k = which == "teacher" ? ctx.cfg.teacher_stages : ctx.cfg.student_stages;
  return load_unfolding_checkpoint<Real>(stem, ctx.cfg.denoiser, k, ctx.cfg.sensing.shift, ctx.cfg.data.source.bands);
}

inline AdaptedModel<Real> load_adapted(const RunContext& ctx) {
  const Producer p = producer_of("adapted");
  const fs::path stem = layout::checkpoint(ctx, p.checkpoint);
  if (!fs::exists(checkpoint_manifest_path(stem))) {
    throw MissingArtifact("missing checkpoint " + checkpoint_manifest_path(stem).string() + "; run `" + p.command + "` first");
  }
  check_lineage(checkpoint_meta(stem).lineage_hash, p.sections, ctx, "checkpoint adapted", p.command);
  return load_adapted_checkpoint<Real>(stem, ctx.cfg.denoiser, ctx.cfg.student_stages, ctx.cfg.sensing.shift,
                                       ctx.cfg.data.source.bands);
}

template <typename M>
void store_checkpoint(const RunContext& ctx, const std::string& which, const M& model) {
  const Producer p = producer_of(which);
  save_checkpoint(layout::checkpoint(ctx, p.checkpoint), model,
                  CheckpointMeta{config_hash(ctx.cfg), config_hash(ctx.cfg, p.sections), p.command});
}

template <typename M>
MetricsReport evaluate_model(const M& model, const LabeledSet& set) {
  std::vector<HyperspectralCube<Real>> recon;
  for (const auto& y : set.ys) recon.push_back(reconstruct(model, y, set.mask));
  return evaluate_cubes(recon, set.cubes);
}

inline void fail_if_aborted(bool aborted, const std::string& message, const std::string& command) {
  if (aborted) throw TrainingError(command + " stopped on a non-finite loss (" + message + "); last good weights saved");
}

// ---------------------------------------------------------------------------
// Commands

inline json cmd_gen_data(const RunContext& ctx) {
  const auto& c = ctx.cfg;
  const auto& src = c.data.source;
  const CodedMask mask = make_mask(src.height, src.width, c.sensing.mask_density, c.sensing.mask_seed);
  const CodedMask tmask = make_mask(src.height, src.width, c.sensing.mask_density, c.sensing.target_mask_seed);
  save_mask(layout::mask(ctx), mask);
  save_mask(layout::target_mask(ctx), tmask);
  json extra{{"config_hash", config_hash(c)}, {"lineage_hash", config_hash(c, data_sections())}};
  json summary = json::object();
  for (auto s : {DataSet::source, DataSet::distill, DataSet::target}) {
    SyntheticConfig sc = set_config(c, s);
    sc.seed = derive_seed(c.seed, salt::data + static_cast<std::uint64_t>(s));
    const auto cubes = gen_synthetic<Real>(sc);
    save_dataset(layout::data(ctx, set_name(s)), cubes, is_target(s) ? "target" : "source", extra);
    double corr = 0;
    for (const auto& cube : cubes) corr += mean_interband_correlation(cube);
    corr /= static_cast<double>(cubes.size());
    summary[set_name(s)] = {{"count", cubes.size()}, {"mean_interband_correlation", corr}};
    ctx.os() << "gen-data: " << set_name(s) << " " << cubes.size() << " scenes, mean inter-band correlation " << corr << '\n';
  }
  write_output_json(ctx, ctx.out / "data" / "summary.json", summary);
  return summary;
}

inline json cmd_train_slow(const RunContext& ctx) {
  const auto& c = ctx.cfg;
  const auto set = load_measured(ctx, DataSet::source);
  std::vector<TrainingPair<Real>> pairs;
  for (std::size_t i = 0; i < set.ys.size(); ++i) pairs.push_back({set.ys[i], set.cubes[i]});
  auto model = make_unfolding_model<Real>(c.denoiser, c.teacher_stages, c.sensing.shift, c.data.source.bands,
                                          derive_seed(c.seed, salt::teacher_init));
  TrainConfig tc = c.train;
  tc.seed = derive_seed(c.seed, salt::train);
  const auto t0 = std::chrono::steady_clock::now();
  auto res = train_supervised(model, pairs, set.mask, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  store_checkpoint(ctx, "teacher", res.model);
  std::vector<std::vector<double>> rows;
  for (std::size_t e = 0; e < res.losses.size(); ++e) rows.push_back({double(e), res.losses[e]});
  write_csv(ctx.out / "train_slow_losses.csv", {"epoch", "loss"}, rows, config_hash(c));
  fail_if_aborted(res.aborted, res.message, "train-slow");
  const auto report = evaluate_model(res.model, set);
  json j{{"initial_loss", res.initial_loss}, {"final_loss", res.final_loss}, {"seconds", secs},
         {"source_metrics", report_json(report)}, {"param_count", res.model.param_count()}};
  write_output_json(ctx, ctx.out / "train_slow.json", j);
  ctx.os() << "train-slow: mse " << res.initial_loss << " -> " << res.final_loss << ", source PSNR "
           << report.mean_psnr << " dB (" << secs << " s)\n";
  return j;
}

inline json cmd_distill(const RunContext& ctx) {
  const auto& c = ctx.cfg;
  const auto teacher = load_backbone(ctx, "teacher");
  const auto set = load_measured(ctx, DataSet::distill);
  DistillSet<Real> dset{set.ys, set.mask};
  auto student = make_unfolding_model<Real>(c.denoiser, c.student_stages, c.sensing.shift, c.data.source.bands,
                                            derive_seed(c.seed, salt::student_init));
  TrainConfig tc = c.distill;
  tc.seed = derive_seed(c.seed, salt::distill);
  auto frozen_teacher = teacher;
  frozen_teacher.set_frozen(true);
  const auto t0 = std::chrono::steady_clock::now();
  auto res = distill(frozen_teacher, student, dset, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool teacher_unchanged = frozen_teacher == teacher;
  store_checkpoint(ctx, "student", res.model);
  std::vector<std::vector<double>> rows;
  for (std::size_t e = 0; e < res.losses.size(); ++e) rows.push_back({double(e), res.losses[e]});
  write_csv(ctx.out / "distill_losses.csv", {"epoch", "l_dis"}, rows, config_hash(c));
  fail_if_aborted(res.aborted, res.message, "distill");
  json j{{"initial_l_dis", res.initial_loss},
         {"final_l_dis", res.final_loss},
         {"ratio", res.final_loss / res.initial_loss},
         {"teacher_unchanged", teacher_unchanged},
         {"teacher_params", teacher.param_count()},
         {"student_params", res.model.param_count()},
         {"seconds", secs}};
  write_output_json(ctx, ctx.out / "distill.json", j);
  ctx.os() << "distill: L_dis " << res.initial_loss << " -> " << res.final_loss << " (" << secs << " s)\n";
  return j;
}

inline SSTConfig sst_config(const ExperimentConfig& c) {
  SSTConfig s = c.sst;
  s.seed = derive_seed(c.seed, salt::sst);
  s.iu_noise = c.sensing.noise();
  return s;
}

inline json cmd_train_adapters(const RunContext& ctx) {
  const auto& c = ctx.cfg;
  const auto student = load_backbone(ctx, "student");
  const auto set = load_measured(ctx, DataSet::target);
  DistillSet<Real> dset{set.ys, set.mask};
  auto adapted = attach_adapters(student, AdapterInit{AdapterInit::Kind::zero_residual, derive_seed(c.seed, salt::adapter_init)});
  const auto backbone_before = adapted.backbone;
  const auto t0 = std::chrono::steady_clock::now();
  auto res = train_adapters(adapted, dset, sst_config(c));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool unchanged = res.model.backbone == backbone_before;
  store_checkpoint(ctx, "adapted", res.model);
  std::vector<std::vector<double>> rows;
  for (std::size_t e = 0; e < res.epochs.size(); ++e) {
    const auto& b = res.epochs[e];
    rows.push_back({double(e), b.total, b.m, b.ei, b.iu, b.tv});
  }
  write_csv(ctx.out / "sst_losses.csv", {"epoch", "total", "l_m", "l_ei", "l_iu", "l_tv"}, rows, config_hash(c));
  fail_if_aborted(res.aborted, res.message, "train-adapters");
  auto bd = [](const SSTBreakdown& b) {
    return json{{"total", b.total}, {"l_m", b.m}, {"l_ei", b.ei}, {"l_iu", b.iu}, {"l_tv", b.tv}};
  };
  json j{{"initial", bd(res.initial)},
         {"final", bd(res.final_)},
         {"backbone_unchanged", unchanged},
         {"adapter_params", res.model.adapter_param_count()},
         {"seconds", secs}};
  write_output_json(ctx, ctx.out / "train_adapters.json", j);
  ctx.os() << "train-adapters: L_sst " << res.initial.total << " -> " << res.final_.total << " (" << secs << " s)\n";
  return j;
}

struct TTASetResult {
  MetricsReport before;
  MetricsReport after;
  std::vector<std::vector<TTATracePoint>> traces;
  bool backbone_unchanged = true;
};

/// Adapts every scene of a labeled set (episodic unless cfg.tta.online).
inline TTASetResult run_tta_set(const ExperimentConfig& c, const AdaptedModel<Real>& model, const LabeledSet& set) {
  TTASetResult r;
  AdaptedModel<Real> current = model;
  const std::uint64_t base = derive_seed(c.seed, salt::tta);
  std::vector<HyperspectralCube<Real>> before, after;
  for (std::size_t i = 0; i < set.ys.size(); ++i) {
    TTAConfig tc = c.tta;
    tc.seed = derive_seed(base, i);
    const AdaptedModel<Real>& start = c.tta.online ? current : model;
    auto res = adapt(start, set.ys[i], set.mask, tc, &set.cubes[i]);
    r.backbone_unchanged = r.backbone_unchanged && res.model.backbone == model.backbone;
    before.push_back(reconstruct(start, set.ys[i], set.mask));
    after.push_back(res.reconstruction);
    r.traces.push_back(res.trace);
    if (c.tta.online) current = std::move(res.model);
  }
  r.before = evaluate_cubes(before, set.cubes);
  r.after = evaluate_cubes(after, set.cubes);
  return r;
}

inline json cmd_tta(const RunContext& ctx) {
  const auto& c = ctx.cfg;
  const auto model = load_adapted(ctx);
  const auto set = load_measured(ctx, DataSet::target);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_tta_set(c, model, set);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string h = config_hash(c);
  std::vector<std::vector<double>> mean_rows;
  for (std::size_t i = 0; i < r.traces.size(); ++i) {
    std::vector<std::vector<double>> rows;
    for (const auto& p : r.traces[i]) rows.push_back({double(p.iter), p.loss, p.im, p.ker, p.best_loss, p.psnr});
    char name[40];
    std::snprintf(name, sizeof(name), "scene_%03zu.csv", i);
    write_csv(ctx.out / "tta" / name, {"iter", "loss", "l_im", "l_ker", "best_loss", "psnr"}, rows, h);
  }
  const std::size_t n_iter = r.traces.empty() ? 0 : r.traces.front().size();
  for (std::size_t it = 0; it < n_iter; ++it) {
    double p = 0, l = 0;
    std::size_t cnt = 0;
    for (const auto& t : r.traces)
      if (it < t.size()) {
        p += t[it].psnr;
        l += t[it].best_loss;
        ++cnt;
      }
    mean_rows.push_back({double(it), p / double(cnt), l / double(cnt)});
  }
  write_csv(ctx.out / "tta" / "mean_curve.csv", {"iter", "mean_psnr", "mean_best_loss"}, mean_rows, h);
  json j{{"before", report_json(r.before)}, {"after", report_json(r.after)},
         {"backbone_unchanged", r.backbone_unchanged}, {"iters", c.tta.iters}, {"seconds", secs}};
  write_output_json(ctx, ctx.out / "tta" / "metrics.json", j);
  ctx.os() << "tta: PSNR " << r.before.mean_psnr << " -> " << r.after.mean_psnr << " dB (" << secs << " s)\n";
  return j;
}

/// Evaluates each requested model on a set; missing models are an error
/// only when requested explicitly.
inline json cmd_evaluate(const RunContext& ctx, const std::string& model = "all", const std::string& dataset = "target") {
  const DataSet s = parse_set(dataset);
  const auto set = load_measured(ctx, s);
  json models = json::object();
  const std::vector<std::string> names =
      model == "all" ? std::vector<std::string>{"teacher", "student", "adapted"} : std::vector<std::string>{model};
  for (const auto& name : names) {
    const Producer p = producer_of(name);
    if (model == "all" && !fs::exists(checkpoint_manifest_path(layout::checkpoint(ctx, p.checkpoint)))) continue;
    MetricsReport rep = name == "adapted" ? evaluate_model(load_adapted(ctx), set) : evaluate_model(load_backbone(ctx, name), set);
    models[name] = report_json(rep);
    ctx.os() << "evaluate: " << name << " on " << dataset << ": PSNR " << rep.mean_psnr << " dB, SSIM " << rep.mean_ssim << '\n';
  }
  if (models.empty()) throw MissingArtifact("no checkpoints found under " + (ctx.out / "checkpoints").string() + "; run `train-slow` first");
  json j{{"dataset", dataset}, {"models", models}};
  write_output_json(ctx, ctx.out / "metrics.json", j);
  return j;
}

struct AblationRow {
  std::size_t stages = 0;
  bool adapters = false, tta = false;
  double psnr = 0, ssim = 0;
  std::size_t params = 0, macs = 0;
};

inline json cmd_ablate(const RunContext& ctx) {
  const auto& c = ctx.cfg;
  const auto teacher = load_backbone(ctx, "teacher");
  const auto student = load_backbone(ctx, "student");
  const auto adapted = load_adapted(ctx);
  const auto set = load_measured(ctx, DataSet::target);
  const std::size_t h = set.mask.height(), w = set.mask.width();
  std::vector<AblationRow> rows;
  auto add = [&](std::size_t k, bool a, bool t, const MetricsReport& r, const ModelStats& st) {
    rows.push_back({k, a, t, r.mean_psnr, r.mean_ssim, st.param_count, st.mac_estimate});
    ctx.os() << "ablate: stages " << k << " adapters " << a << " tta " << t << ": PSNR " << r.mean_psnr << " dB\n";
  };
  add(c.teacher_stages, false, false, evaluate_model(teacher, set), model_stats(teacher, h, w));
  add(c.student_stages, false, false, evaluate_model(student, set), model_stats(student, h, w));
  const auto tta = run_tta_set(c, adapted, set);
  add(c.student_stages, true, false, tta.before, model_stats(adapted, h, w));
  add(c.student_stages, true, true, tta.after, model_stats(adapted, h, w));
  std::vector<std::vector<double>> csv;
  json jr = json::array();
  for (const auto& r : rows) {
    csv.push_back({double(r.stages), double(r.adapters), double(r.tta), r.psnr, r.ssim, double(r.params), double(r.macs)});
    jr.push_back({{"stages", r.stages}, {"adapters_on", r.adapters}, {"tta_on", r.tta}, {"psnr", r.psnr},
                  {"ssim", r.ssim}, {"params", r.params}, {"macs", r.macs}});
  }
  write_csv(ctx.out / "ablation.csv", {"stages", "adapters_on", "tta_on", "psnr", "ssim", "params", "macs"}, csv, config_hash(c));
  json j{{"rows", jr}, {"tta_backbone_unchanged", tta.backbone_unchanged}};
  write_output_json(ctx, ctx.out / "ablation.json", j);
  return j;
}

struct WienerLabResult {
  double relative_l2 = 0;
  double final_loss = 0;
  double wiener_mse = 0;  // MSE of the exact Wiener filter on the same pairs
  double measured_gap = 0;
  double gap_bound = 0;
  FrequencyFilter learned, closed_form;
};

/// Smooth Gaussian-shaped power spectrum used by the lab.
inline Tensor<double> lab_spectrum(std::size_t n, double corr_length, double scale = 1.0) {
  const double pi = std::numbers::pi;
  return radial_spectrum(1, n, n, [&](double f) {
    const double a = 2 * pi * f * corr_length;
    return scale * 4.0 * std::exp(-0.5 * a * a) + 1e-3;
  });
}

inline WienerLabResult run_wiener_lab(const WienerSettings& w, std::uint64_t seed) {
  WienerLabResult r;
  const auto dens = lab_spectrum(w.size, w.corr_length);
  const auto pairs = stationary_pairs(dens, w.noise_sigma, w.samples, seed);
  r.closed_form = wiener_filter(stationary_stats(dens, w.noise_sigma));
  double lr = w.lr;
  if (lr == 0) {
    // 1 / L with L = 2 c n max|R|^2 bounding the Hessian of the empirical MSE
    double amax = 0;
    std::vector<double> a(w.size * w.size, 0.0);
    for (const auto& p : pairs) {
      const auto spec = dft2(p.noisy.plane(0), w.size, w.size);
      for (std::size_t i = 0; i < spec.size(); ++i) a[i] += std::norm(spec[i]);
    }
    for (double v : a) amax = std::max(amax, v);
    const double n = static_cast<double>(w.size * w.size);
    const double c = 1.0 / (static_cast<double>(pairs.size()) * n * n);
    lr = 1.0 / (2.0 * c * n * amax);
  }
  const auto fit = fit_linear_denoiser(pairs, w.kernel_size, w.steps, lr);
  r.final_loss = fit.final_loss;
  r.learned = learned_response(fit.kernel, w.size, w.size);
  r.relative_l2 = relative_l2(r.learned.response, r.closed_form.response);
  double acc = 0;
  for (const auto& p : pairs) acc += mse(apply_filter(p.noisy, r.closed_form), p.clean);
  r.wiener_mse = acc / static_cast<double>(pairs.size());
  // gap between the Wiener filters of a domain and its rho-scaled spectrum
  const auto target = wiener_filter(stationary_stats(lab_spectrum(w.size, w.corr_length, w.rho), w.noise_sigma));
  r.measured_gap = max_abs(Tensor<double>(target.response - r.closed_form.response));
  r.gap_bound = wiener_gap_bound(w.rho);
  return r;
}

inline json cmd_wiener_lab(const RunContext& ctx) {
  const auto& w = ctx.cfg.wiener;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_wiener_lab(w, derive_seed(ctx.cfg.seed, salt::wiener));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::vector<std::vector<double>> rows;
  for (std::size_t k1 = 0; k1 < w.size; ++k1)
    for (std::size_t k2 = 0; k2 < w.size; ++k2)
      rows.push_back({double(k1), double(k2), r.learned.response(0, k1, k2), r.closed_form.response(0, k1, k2)});
  write_csv(ctx.out / "wiener" / "filter.csv", {"k1", "k2", "learned", "closed_form"}, rows, config_hash(ctx.cfg));
  json j{{"relative_l2", r.relative_l2}, {"final_loss", r.final_loss}, {"wiener_mse", r.wiener_mse},
         {"measured_gap", r.measured_gap}, {"gap_bound", r.gap_bound}, {"rho", w.rho}, {"seconds", secs}};
  write_output_json(ctx, ctx.out / "wiener" / "summary.json", j);
  ctx.os() << "wiener-lab: relative L2 " << r.relative_l2 << ", gap " << r.measured_gap << " <= " << r.gap_bound << '\n';
  return j;
}

inline json cmd_stats(const RunContext& ctx) {
  const auto& c = ctx.cfg;
  const std::size_t b = c.data.source.bands, h = c.data.source.height, w = c.data.source.width;
  const auto teacher = make_unfolding_model<Real>(c.denoiser, c.teacher_stages, c.sensing.shift, b, 0);
  const auto student = make_unfolding_model<Real>(c.denoiser, c.student_stages, c.sensing.shift, b, 0);
  const auto adapted = attach_adapters(student);
  const auto st = model_stats(teacher, h, w), ss = model_stats(student, h, w), sa = model_stats(adapted, h, w);
  const double stage_params = static_cast<double>(teacher.param_count()) / static_cast<double>(c.teacher_stages);
  auto rec = [](const ModelStats& s) { return json{{"params", s.param_count}, {"macs", s.mac_estimate}}; };
  json j{{"teacher", rec(st)},
         {"student", rec(ss)},
         {"student_adapters", rec(sa)},
         {"params_ratio", static_cast<double>(sa.param_count) / static_cast<double>(st.param_count)},
         {"macs_ratio", static_cast<double>(sa.mac_estimate) / static_cast<double>(st.mac_estimate)},
         {"adapter_to_stage_ratio", static_cast<double>(adapted.adapters.front().param_count()) / stage_params}};
  write_output_json(ctx, ctx.out / "stats.json", j);
  ctx.os() << "stats: teacher " << st.param_count << " params, student+adapters " << sa.param_count << " params (ratio "
           << j["params_ratio"].get<double>() << ")\n";
  return j;
}

}  // namespace sfsci
