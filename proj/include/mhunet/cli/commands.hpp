#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mhunet/cli/config.hpp"
#include "mhunet/data.hpp"
#include "mhunet/metrics/metrics.hpp"
#include "mhunet/model.hpp"
#include "mhunet/ssm/ssm_core.hpp"

namespace mhunet::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;

/// One event per line: "<timestamp> <event> key=value ...", without the timestamp in
/// deterministic mode.
class Logger {
 public:
  Logger(std::ostream& out, bool deterministic) : out_(out), deterministic_(deterministic) {}

  void event(const std::string& name, const std::string& fields = "") {
    if (!deterministic_) {
      const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
      std::tm tm{};
      gmtime_r(&now, &tm);
      out_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ';
    }
    out_ << name;
    if (!fields.empty()) out_ << ' ' << fields;
    out_ << '\n';
    out_.flush();
  }

 private:
  std::ostream& out_;
  bool deterministic_;
};

/// Shortest decimal that round-trips the double.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "undefined"; }

inline fs::path out_dir(const RunConfig& rc) {
  fs::path p = rc.required("run.out");
  fs::create_directories(p);
  return p;
}

inline model::ModelConfig model_config(const RunConfig& rc) {
  const auto& preset = rc.str("model.preset");
  model::ModelConfig c;
  if (preset == "base")
    c = model::ModelConfig::base();
  else if (preset == "lighter")
    c = model::ModelConfig::lighter();
  else
    throw ConfigError("model.preset must be base or lighter, got '" + preset + "'");
  auto has = [&](const char* k) { return !rc.str(std::string("model.") + k).empty(); };
  if (has("patch_size")) c.patch_size = rc.size("model.patch_size");
  if (has("embed_dim")) c.embed_dim = rc.size("model.embed_dim");
  if (has("depths")) c.stage_depths = rc.size_list("model.depths");
  if (has("state_dim")) c.state_dim = rc.size("model.state_dim");
  if (has("num_classes")) c.num_classes = rc.size("model.num_classes");
  if (has("dropout")) c.dropout_rate = rc.real("model.dropout");
  if (has("activation")) c.activation = model::parse_activation(rc.str("model.activation"));
  if (has("rule")) c.rule = model::parse_rule(rc.str("model.rule"));
  if (has("expand")) c.expand = rc.size("model.expand");
  c.input_extent = rc.size("data.extent");
  model::validate(c);
  return c;
}

inline data::PreprocessOptions preprocess_options(const RunConfig& rc) {
  data::PreprocessOptions o;
  o.extent = rc.size("data.extent");
  if (o.extent == 0) throw ConfigError("data.extent must be positive");
  o.sharpen_amount = rc.real("data.sharpen_amount");
  if (o.sharpen_amount < 0) throw ConfigError("data.sharpen_amount must be non-negative");
  o.sharpen_radius = rc.size("data.sharpen_radius");
  o.axis = data::parse_axis(rc.str("data.axis"));
  return o;
}

inline model::Sample to_sample(const data::SliceRecord& r, std::size_t extent) {
  if (r.image.height != extent || r.image.width != extent)
    throw DimensionError("slice " + r.patient + "/" + std::to_string(r.slice_index) + " is " +
                         std::to_string(r.image.height) + "x" + std::to_string(r.image.width) +
                         ", model expects " + std::to_string(extent) + "x" + std::to_string(extent));
  if (!r.mask) throw ContractError("slice " + r.patient + "/" + std::to_string(r.slice_index) + " has no mask");
  return model::Sample{Tensor(Shape{1, extent, extent}, r.image.data), *r.mask};
}

// ---------------------------------------------------------------------------------------------

/// Writes <out>/<patient>/img.nii and gt.nii for synthetic ellipse patients.
inline int cmd_synth(const RunConfig& rc, Logger& log) {
  const auto out = out_dir(rc);
  data::EllipseOptions opt;
  opt.extent = rc.size("synth.extent");
  opt.max_lesions = std::max<std::size_t>(1, rc.size("synth.max_lesions"));
  opt.noise = rc.real("synth.noise");
  opt.max_axis = std::max(opt.min_axis, std::min(opt.max_axis, double(opt.extent) / 4));
  if (opt.extent < 4 * opt.min_axis) throw ConfigError("synth.extent must be at least 12");
  const auto patients = rc.size("synth.patients"), slices = rc.size("synth.slices");
  if (slices == 0) throw ConfigError("synth.slices must be positive");
  RandomSource rng(rc.u64("run.seed"));
  for (std::size_t p = 0; p < patients; ++p) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%03zu", p);
    auto vol = data::generate_ellipse_volume(rng, slices, opt);
    fs::create_directories(out / id);
    data::Nifti1Header img_h, lbl_h;
    lbl_h.datatype = static_cast<std::int16_t>(data::NiftiType::uint8);
    data::write_file_bytes(out / id / rc.str("data.image_name"), data::write_nifti1(img_h, vol.image));
    data::write_file_bytes(out / id / rc.str("data.mask_name"), data::write_nifti1(lbl_h, vol.labels));
  }
  log.event("synth", "patients=" + std::to_string(patients) + " slices=" + std::to_string(slices) +
                         " extent=" + std::to_string(opt.extent) + " out=" + out.string());
  return kExitOk;
}

/// NIfTI volumes -> preprocessed slice files plus manifest.tsv with the patient split.
inline int cmd_preprocess(const RunConfig& rc, Logger& log) {
  const fs::path input = rc.required("data.input");
  if (!fs::is_directory(input)) throw IoError("input directory '" + input.string() + "' does not exist");
  const auto opt = preprocess_options(rc);
  const std::string image_name = rc.str("data.image_name"), mask_name = rc.str("data.mask_name");

  std::vector<std::string> patients;
  for (const auto& entry : fs::directory_iterator(input))
    if (entry.is_directory() && fs::exists(entry.path() / image_name))
      patients.push_back(entry.path().filename().string());
  std::sort(patients.begin(), patients.end());
  if (patients.empty()) throw IoError("no volumes found in '" + input.string() + "'");

  const auto out = out_dir(rc);
  const auto split = data::split_patients(patients, rc.u64("run.seed"));
  std::map<std::string, std::string> assignment;
  for (const auto& p : split.train) assignment[p] = "train";
  for (const auto& p : split.val) assignment[p] = "val";
  for (const auto& p : split.test) assignment[p] = "test";

  std::vector<data::ManifestEntry> manifest;
  std::size_t total = 0;
  for (const auto& patient : patients) {
    const auto image_path = input / patient / image_name, mask_path = input / patient / mask_name;
    std::vector<data::Image2D> images, labels;
    try {
      images = data::slice_volume(data::load_nifti(image_path).volume, opt.axis);
      if (fs::exists(mask_path)) labels = data::slice_volume(data::load_nifti(mask_path).volume, opt.axis);
    } catch (const ParseError& e) {
      throw ParseError(e.field(), image_path.parent_path().string() + ": " + e.what());
    }
    if (!labels.empty() && (labels.size() != images.size() || labels[0].height != images[0].height ||
                            labels[0].width != images[0].width))
      throw DimensionError(mask_path.string() + ": label volume extents differ from the image volume");

    fs::remove_all(out / patient);
    for (std::size_t z = 0; z < images.size(); ++z) {
      data::SliceRecord r;
      r.patient = patient;
      r.slice_index = static_cast<std::uint32_t>(z);
      r.image = data::preprocess_slice(images[z], opt);
      if (!labels.empty()) r.mask = data::resize_nearest(data::binarize(labels[z]), opt.extent, opt.extent);
      r.source = patient + "/" + image_name;
      r.axis = data::axis_name(opt.axis);
      data::save_slice(out, r);
    }
    manifest.push_back({patient, static_cast<std::uint32_t>(images.size()), assignment.at(patient)});
    total += images.size();
  }
  const auto text = data::format_manifest(manifest);
  data::write_file_bytes(out / data::kManifestName, std::vector<std::uint8_t>(text.begin(), text.end()));
  log.event("preprocess", "patients=" + std::to_string(patients.size()) + " slices=" + std::to_string(total) +
                              " train=" + std::to_string(split.train.size()) + " val=" +
                              std::to_string(split.val.size()) + " test=" + std::to_string(split.test.size()));
  return kExitOk;
}

inline std::vector<model::Sample> load_samples(const fs::path& dataset, const std::string& split, std::size_t extent) {
  std::vector<model::Sample> out;
  for (const auto& r : data::load_split(dataset, split)) out.push_back(to_sample(r, extent));
  return out;
}

/// Trains on the train split, validates on val after every epoch, keeps the best checkpoint.
inline int cmd_train(const RunConfig& rc, Logger& log) {
  const fs::path dataset = rc.required("data.dataset");
  const auto cfg = model_config(rc);
  model::FitOptions fo;
  fo.epochs = rc.size("train.epochs");
  fo.batch_size = rc.size("train.batch_size");
  fo.seed = rc.u64("run.seed");
  fo.optimizer.kind = model::parse_optimizer(rc.str("train.optimizer"));
  fo.optimizer.lr = rc.real("train.lr");
  fo.optimizer.beta1 = rc.real("train.beta1");
  fo.optimizer.beta2 = rc.real("train.beta2");
  fo.loss.dice = rc.real("train.dice_weight");
  fo.loss.cross_entropy = rc.real("train.ce_weight");
  if (fo.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (fo.optimizer.lr < 0) throw ConfigError("train.lr must be >= 0");

  const auto train = load_samples(dataset, "train", cfg.input_extent);
  const auto val = load_samples(dataset, "val", cfg.input_extent);
  if (fo.epochs > 0 && train.empty()) throw IoError("dataset '" + dataset.string() + "' has no training slices");
  const auto out = out_dir(rc);
  log.event("train_start", "train_slices=" + std::to_string(train.size()) + " val_slices=" +
                               std::to_string(val.size()) + " params=" + std::to_string(model::count_params(cfg)));

  std::string loss_log = "step\tepoch\tloss\n";
  auto result = model::fit(
      train, val, cfg, model::init_parameters(cfg, fo.seed), fo,
      [&](std::size_t epoch, std::size_t step, real loss) {
        loss_log += std::to_string(step) + "\t" + std::to_string(epoch) + "\t" + fmt(loss) + "\n";
      },
      [&](const model::EpochReport& e) {
        log.event("epoch", "epoch=" + std::to_string(e.epoch) + " mean_loss=" + fmt(e.mean_loss) +
                               " val_dsc=" + fmt_opt(e.val_dsc));
      });
  data::write_file_bytes(out / rc.str("train.log"), std::vector<std::uint8_t>(loss_log.begin(), loss_log.end()));
  model::save_checkpoint((out / rc.str("train.checkpoint")).string(), cfg, result.best_params);
  log.event("train_done", "epochs=" + std::to_string(fo.epochs) + " steps=" +
                              std::to_string(result.step_losses.size()) + " best_epoch=" +
                              std::to_string(result.best_epoch) + " best_val_dsc=" + fmt_opt(result.best_dsc));
  return kExitOk;
}

inline model::Checkpoint open_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw IoError("checkpoint '" + path + "' not found");
  return model::load_checkpoint(path);
}

/// Per-case and aggregate metrics on a split, as JSON.
inline int cmd_eval(const RunConfig& rc, Logger& log) {
  const fs::path dataset = rc.required("data.dataset");
  const auto split = rc.str("eval.split");
  if (split != "train" && split != "val" && split != "test")
    throw ConfigError("eval.split must be train, val or test");
  const auto reference = rc.str("eval.reference");
  if (reference != "model" && reference != "ground_truth")
    throw ConfigError("eval.reference must be model or ground_truth");
  const auto unit = rc.str("eval.spacing");
  if (unit != "pixel" && unit != "mm") throw ConfigError("eval.spacing must be pixel or mm");

  std::optional<model::Checkpoint> ckpt;
  if (reference == "model") ckpt = open_checkpoint(rc.required("eval.checkpoint"));
  const auto records = data::load_split(dataset, split);
  if (records.empty()) throw IoError("split '" + split + "' of '" + dataset.string() + "' is empty");

  metrics::Json cases = metrics::Json::array();
  std::vector<metrics::MetricsReport> reports;
  for (const auto& r : records) {
    if (!r.mask) throw ContractError("slice " + r.patient + "/" + std::to_string(r.slice_index) + " has no mask");
    SegMask pred = *r.mask;
    if (ckpt) pred = model::predict(to_sample(r, ckpt->config.input_extent).image, ckpt->params, ckpt->config);
    std::optional<metrics::Spacing> spacing;
    if (unit == "mm") spacing = metrics::Spacing{r.image.row_spacing, r.image.col_spacing};
    reports.push_back(metrics::evaluate(pred, *r.mask, spacing));
    metrics::Json c;
    c["patient"] = r.patient;
    c["slice"] = r.slice_index;
    c.update(metrics::to_json(reports.back()));
    cases.push_back(std::move(c));
  }
  metrics::Json report;
  report["split"] = split;
  report["reference"] = reference;
  report["hd95_unit"] = unit;
  report["aggregate"] = metrics::to_json(metrics::aggregate(reports));
  report["cases"] = std::move(cases);
  const auto text = report.dump(2) + "\n";
  const auto out = out_dir(rc);
  data::write_file_bytes(out / rc.str("eval.report"), std::vector<std::uint8_t>(text.begin(), text.end()));
  const auto& agg = report["aggregate"];
  log.event("eval", "split=" + split + " n=" + std::to_string(reports.size()) + " dsc=" + agg["dsc"].dump() +
                        " iou=" + agg["iou"].dump() + " hd95=" + agg["hd95"].dump());
  return kExitOk;
}

/// Mask PNG for one slice file or one slice of a NIfTI volume.
inline int cmd_predict(const RunConfig& rc, Logger& log) {
  const auto ckpt = open_checkpoint(rc.required("predict.checkpoint"));
  const fs::path input = rc.required("predict.input");
  if (!fs::exists(input)) throw IoError("input '" + input.string() + "' not found");
  const std::size_t extent = ckpt.config.input_extent;

  data::Image2D image;
  if (input.extension() == ".bin") {
    image = data::load_slice(input).image;
  } else {
    auto opt = preprocess_options(rc);
    opt.extent = extent;
    const auto slices = data::slice_volume(data::load_nifti(input).volume, opt.axis);
    const auto index = rc.size("predict.slice");
    if (index >= slices.size())
      throw ContractError("predict.slice " + std::to_string(index) + " out of range (volume has " +
                          std::to_string(slices.size()) + " slices)");
    image = data::preprocess_slice(slices[index], opt);
  }
  if (image.height != extent || image.width != extent)
    throw DimensionError("input slice is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         ", checkpoint expects " + std::to_string(extent) + "x" + std::to_string(extent));
  const auto mask = model::predict(Tensor(Shape{1, extent, extent}, image.data), ckpt.params, ckpt.config);
  const auto path = out_dir(rc) / rc.str("predict.output");
  data::write_png_mask(mask, path);
  log.event("predict", "input=" + input.string() + " output=" + path.string() +
                           " foreground=" + std::to_string(mask.foreground()));
  return kExitOk;
}

struct BenchRow {
  std::size_t length = 0, state = 0;
  double recurrent_ms = 0, convolution_ms = 0, max_deviation = 0;
};

/// Recurrent scan vs FFT convolution with the materialized kernel on a HiPPO system.
inline std::vector<BenchRow> bench_scan(const std::vector<std::size_t>& lengths, const std::vector<std::size_t>& states,
                                        double delta, std::size_t repeats, std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  RandomSource root(seed);
  for (auto L : lengths)
    for (auto n : states) {
      if (L == 0 || n == 0) throw ConfigError("bench: lengths and states must be positive");
      RandomSource rng = root.fork(L * 1000 + n);
      std::vector<real> b(n), c(n), u(L);
      for (auto& v : b) v = rng.normal();
      for (auto& v : c) v = rng.normal() / std::sqrt(double(n));
      for (auto& v : u) v = rng.normal();
      const ssm::ContinuousSSM sys{ssm::hippo_legs_init(n), Tensor(Shape{n, 1}, b), Tensor(Shape{1, n}, c), 0.5};
      const auto d = ssm::discretize_bilinear(sys, delta);
      BenchRow row{L, n, INFINITY, INFINITY, 0};
      std::vector<real> y_rec, y_conv;
      for (std::size_t r = 0; r < std::max<std::size_t>(1, repeats); ++r) {
        auto t0 = clock::now();
        y_rec = ssm::scan_recurrent(d, u);
        auto t1 = clock::now();
        y_conv = ssm::apply_convolutional(ssm::materialize_kernel(d, L), u, d.D, ssm::ConvMode::fft);
        auto t2 = clock::now();
        row.recurrent_ms = std::min(row.recurrent_ms, std::chrono::duration<double, std::milli>(t1 - t0).count());
        row.convolution_ms = std::min(row.convolution_ms, std::chrono::duration<double, std::milli>(t2 - t1).count());
      }
      for (std::size_t i = 0; i < L; ++i) row.max_deviation = std::max(row.max_deviation, std::abs(y_rec[i] - y_conv[i]));
      rows.push_back(row);
    }
  return rows;
}

inline constexpr double kBenchTolerance = 1e-8;

inline int cmd_bench_scan(const RunConfig& rc, Logger& log) {
  const auto rows = bench_scan(rc.size_list("bench.lengths"), rc.size_list("bench.states"), rc.real("bench.delta"),
                               rc.size("bench.repeats"), rc.u64("run.seed"));
  std::string table = "length\tstate\trecurrent_ms\tfft_ms\tmax_deviation\n";
  bool ok = true;
  for (const auto& r : rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%zu\t%zu\t%.4f\t%.4f\t%.3e\n", r.length, r.state, r.recurrent_ms,
                  r.convolution_ms, r.max_deviation);
    table += line;
    ok = ok && r.max_deviation <= kBenchTolerance;
  }
  std::cout << table;
  data::write_file_bytes(out_dir(rc) / "bench_scan.tsv", std::vector<std::uint8_t>(table.begin(), table.end()));
  log.event("bench_scan", "rows=" + std::to_string(rows.size()) + " deviation_guard=" + (ok ? "pass" : "fail"));
  return ok ? kExitOk : kExitNumeric;
}

using Command = std::function<int(const RunConfig&, Logger&)>;

inline const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table = {
      {"synth", cmd_synth},   {"preprocess", cmd_preprocess}, {"train", cmd_train},
      {"eval", cmd_eval},     {"predict", cmd_predict},       {"bench-scan", cmd_bench_scan},
  };
  return table;
}

/// Runs a command, logging the resolved configuration first, and maps failures to exit codes:
/// 2 for input and configuration problems, 3 for numerical failures.
inline int run_command(const std::string& name, const RunConfig& rc, std::ostream& out, std::ostream& err) {
  bool deterministic = false;
  try {
    deterministic = rc.flag("run.deterministic");
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
  Logger log(out, deterministic);
  auto it = commands().find(name);
  if (it == commands().end()) {
    err << "error: unknown command '" << name << "'\n";
    return kExitInput;
  }
  try {
    log.event("command", name);
    for (const auto& line : rc.resolved_lines()) log.event("config", line);
    return it->second(rc, log);
  } catch (const TrainingError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const SingularityError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << " [field " << e.field() << "]\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    // Configuration, I/O, dimension and contract errors all describe bad input.
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
}

}  // namespace mhunet::cli
