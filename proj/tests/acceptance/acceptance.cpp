// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mhunet/cli/commands.hpp"
#include "mhunet/data.hpp"
#include "mhunet/metrics/metrics.hpp"
#include "mhunet/model.hpp"
#include "mhunet/numeric/fft.hpp"
#include "mhunet/ssm/selective_scan.hpp"
#include "support/gradcheck.hpp"
#include "support/metric_oracles.hpp"
#include "support/model_fixtures.hpp"
#include "support/nifti_fixtures.hpp"
#include "support/primitive_gradchecks.hpp"
#include "support/ssm_fixtures.hpp"

using namespace mhunet;
namespace fs = std::filesystem;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1. Recurrent and convolutional evaluation agree on random stable systems.
Verdict recurrent_vs_convolution() {
  const auto t0 = clock_type::now();
  RandomSource rng(101);
  double worst = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    auto sys = trial % 2 ? ssm::fixtures::hippo_system(n, rng.next_u64()) : ssm::fixtures::diagonal_system(rng, n);
    auto d = ssm::discretize_bilinear(sys, rng.uniform(1e-3, 1));
    const std::size_t L = 1 + rng.below(256);
    std::vector<real> u(L);
    for (auto& v : u) v = rng.normal();
    const auto rec = ssm::scan_recurrent(d, u);
    const auto k = ssm::materialize_kernel(d, L);
    for (auto mode : {ssm::ConvMode::direct, ssm::ConvMode::fft})
      worst = std::max(worst, max_abs_diff(rec, ssm::apply_convolutional(k, u, d.D, mode)));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-8 && t < 10, "500 systems, max deviation " + fmt("%.3e", worst) + ", " + fmt("%.2f", t) + " s"};
}

// 2. FFT convolution matches direct convolution up to L = 4096, and the bench guard holds.
Verdict fft_matches_direct() {
  const auto t0 = clock_type::now();
  RandomSource rng(202);
  double worst = 0;
  for (std::size_t L : {1, 2, 3, 17, 64, 255, 256, 1000, 1024, 2048, 4095, 4096}) {
    std::vector<real> u(L), k(L);
    for (auto& v : u) v = rng.normal();
    for (std::size_t i = 0; i < L; ++i) k[i] = rng.normal() * std::pow(0.999, double(i));
    worst = std::max(worst, max_abs_diff(causal_convolve_direct<real>(u, k), fft_convolve(u, k)));
  }
  double bench_worst = 0;
  for (const auto& row : cli::bench_scan({256, 1024, 4096}, {4, 16}, 0.01, 1, 0))
    bench_worst = std::max(bench_worst, row.max_deviation);
  const double t = seconds_since(t0);
  return {worst <= 1e-8 && bench_worst <= cli::kBenchTolerance && t < 30,
          "conv deviation " + fmt("%.3e", worst) + ", bench deviation " + fmt("%.3e", bench_worst) + ", " +
              fmt("%.2f", t) + " s"};
}

// 3. Bilinear discretization: scalar hand formulas and the vanishing-step limit.
Verdict bilinear_hand_formulas() {
  auto scalar = [](real a, real b) {
    return ssm::ContinuousSSM{Tensor(Shape{1, 1}, {a}), Tensor(Shape{1, 1}, {b}), Tensor(Shape{1, 1}, {1}), 0};
  };
  double worst = 0;
  auto d = ssm::discretize_bilinear(scalar(-1, 1), 1);
  worst = std::max({worst, std::abs(d.A_bar[0] - 1.0 / 3.0), std::abs(d.B_bar[0] - 2.0 / 3.0)});
  RandomSource rng(303);
  for (int t = 0; t < 200; ++t) {
    const real a = -rng.uniform(0, 10), b = rng.normal(), delta = rng.uniform(1e-3, 2);
    auto ds = ssm::discretize_bilinear(scalar(a, b), delta);
    const real p = 1 - delta * a / 2;
    worst = std::max({worst, std::abs(ds.A_bar[0] - (1 + delta * a / 2) / p), std::abs(ds.B_bar[0] - delta * b / p)});
  }
  auto tiny = ssm::discretize_bilinear(ssm::fixtures::hippo_system(6, 9), 1e-8);
  double id_dev = max_abs_diff(tiny.A_bar, Tensor::identity(6)), b_max = 0;
  for (real v : tiny.B_bar.data()) b_max = std::max(b_max, std::abs(v));
  return {worst <= 1e-12 && id_dev <= 1e-7 && b_max <= 1e-7,
          "hand formula " + fmt("%.3e", worst) + ", |A-I| " + fmt("%.3e", id_dev) + ", |B| " + fmt("%.3e", b_max)};
}

// 4. Tape gradients match central differences for every primitive and end to end.
Verdict gradients() {
  const auto t0 = clock_type::now();
  double prim = 0;
  std::string worst_name;
  const auto errors = mhunet::testing::primitive_gradient_errors();
  for (const auto& [name, e] : errors)
    if (e >= prim) {
      prim = e;
      worst_name = name;
    }
  const auto probe = mhunet::testing::probe_model_gradients(mhunet::testing::toy_config(), 11, 100);
  const double t = seconds_since(t0);
  return {prim <= 1e-4 && probe.worst_relative_error <= 1e-3 && probe.probes >= 100 && t < 300,
          std::to_string(errors.size()) + " primitives, worst " + fmt("%.3e", prim) + " (" + worst_name + "); " +
              std::to_string(probe.probes) + " model probes, worst " + fmt("%.3e", probe.worst_relative_error) +
              ", " + fmt("%.1f", t) + " s"};
}

ssm::SelectiveParams random_selective(RandomSource& rng, std::size_t C, std::size_t n) {
  using mhunet::testing::random_tensor;
  return ssm::SelectiveParams{random_tensor(rng, {C, n}, -3, -0.1), random_tensor(rng, {C, C}, -0.5, 0.5),
                              random_tensor(rng, {C}, -1, 1),       random_tensor(rng, {C, n}, -0.5, 0.5),
                              random_tensor(rng, {n}, -0.5, 0.5),   random_tensor(rng, {C, n}, -0.5, 0.5),
                              random_tensor(rng, {n}, -0.5, 0.5),   random_tensor(rng, {C}, -1, 1)};
}

// 5. Frozen projections reduce the selective scan to an LTI scan; outputs are causal.
Verdict selective_scan_properties() {
  RandomSource rng(404);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 1 + rng.below(4), n = 1 + rng.below(8), L = 1 + rng.below(64);
    auto p = random_selective(rng, C, n);
    p.W_delta = Tensor::zeros({C, C});
    p.W_B = Tensor::zeros({C, n});
    p.W_C = Tensor::zeros({C, n});
    auto u = mhunet::testing::random_tensor(rng, {L, C}, -2, 2);
    auto y = ssm::selective_scan_1d(u, p, ssm::Discretization::bilinear).value();
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<real> a(n * n, 0), b(n), cc(n), uc(L);
      for (std::size_t s = 0; s < n; ++s) {
        a[s * n + s] = p.A_diag.value().at(c, s);
        b[s] = p.b_B.value()[s];
        cc[s] = p.b_C.value()[s];
      }
      for (std::size_t t = 0; t < L; ++t) uc[t] = u.at(t, c);
      ssm::ContinuousSSM sys{Tensor(Shape{n, n}, a), Tensor(Shape{n, 1}, b), Tensor(Shape{1, n}, cc),
                             p.D_skip.value()[c]};
      auto ref = ssm::scan_recurrent(ssm::discretize_bilinear(sys, softplus_scalar(p.b_delta.value()[c])), uc);
      for (std::size_t t = 0; t < L; ++t) worst = std::max(worst, std::abs(y.at(t, c) - ref[t]));
    }
  }
  std::size_t causal_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 1 + rng.below(4), n = 1 + rng.below(6), L = 2 + rng.below(40);
    auto p = random_selective(rng, C, n);
    auto u = mhunet::testing::random_tensor(rng, {L, C}, -2, 2);
    const std::size_t tau = rng.below(L - 1);
    std::vector<real> changed(u.vec());
    for (std::size_t i = (tau + 1) * C; i < changed.size(); ++i) changed[i] += rng.normal();
    auto rule = trial % 2 ? ssm::Discretization::zoh : ssm::Discretization::bilinear;
    auto y1 = ssm::selective_scan_1d(u, p, rule).value();
    auto y2 = ssm::selective_scan_1d(Tensor(u.shape(), changed), p, rule).value();
    bool same = true;
    for (std::size_t i = 0; i < (tau + 1) * C; ++i) same = same && y1[i] == y2[i];
    causal_ok += same;
  }
  return {worst <= 1e-10 && causal_ok == 100,
          "LTI reduction " + fmt("%.3e", worst) + ", causality " + std::to_string(causal_ok) + "/100 bit-identical"};
}

// 6. Base model at 256x256: logits and encoder stage shapes; the lighter preset is smaller.
Verdict base_model_shapes() {
  const auto t0 = clock_type::now();
  const auto cfg = model::ModelConfig::base();
  const auto params = model::init_parameters(cfg, 1);
  RandomSource rng(606);
  auto out = model::forward_full(Var(mhunet::testing::random_image(rng, 256)), model::ParamView(params), cfg,
                                 model::ForwardContext{});
  bool ok = out.logits.shape() == Shape{2, 256, 256} && out.logits.value().all_finite() &&
            out.encoder.stages.size() == 4;
  const std::size_t extents[] = {64, 32, 16, 8}, channels[] = {96, 192, 384, 768};
  for (std::size_t i = 0; ok && i < 4; ++i) {
    const auto& st = out.encoder.stages[i];
    ok = st.height == extents[i] && st.width == extents[i] && st.channels == channels[i] &&
         st.tokens.shape() == Shape{extents[i] * extents[i], channels[i]};
  }
  const auto base_n = model::count_params(cfg), light_n = model::count_params(model::ModelConfig::lighter());
  ok = ok && light_n < base_n;
  return {ok, "logits " + shape_str(out.logits.shape()) + ", params base " + std::to_string(base_n) + " lighter " +
                  std::to_string(light_n) + ", " + fmt("%.1f", seconds_since(t0)) + " s"};
}

// 7. Metrics agree exactly with brute-force oracles on 1000 random pairs.
Verdict metric_oracles() {
  const auto t0 = clock_type::now();
  RandomSource rng(707);
  std::size_t mismatches = 0;
  double identity = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t h = 1 + rng.below(64), w = 1 + rng.below(64);
    auto pred = mhunet::testing::random_mask(rng, h, w), gt = mhunet::testing::random_mask(rng, h, w);
    const auto o = mhunet::testing::oracle_counts(pred, gt);
    const auto r = metrics::evaluate(pred, gt);
    bool ok = metrics::confusion(pred, gt) == metrics::ConfusionCounts{o.tp, o.fp, o.fn, o.tn};
    const double pos = double(o.tp + o.fp + o.fn);
    if (pos > 0) {
      ok = ok && r.iou && *r.iou == double(o.tp) / pos && r.dsc && *r.dsc == double(2 * o.tp) / (pos + double(o.tp));
      if (r.iou && r.dsc) identity = std::max(identity, std::abs(*r.dsc - 2 * *r.iou / (1 + *r.iou)));
    } else {
      ok = ok && !r.iou && !r.dsc;
    }
    if (o.tp + o.fn) ok = ok && r.sensitivity && *r.sensitivity == double(o.tp) / double(o.tp + o.fn);
    if (o.tn + o.fp) ok = ok && r.specificity && *r.specificity == double(o.tn) / double(o.tn + o.fp);
    ok = ok && r.hd95 == mhunet::testing::oracle_hd95(pred, gt) && metrics::hd95(pred, gt) == metrics::hd95(gt, pred);
    mismatches += !ok;
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && identity <= 1e-12 && t < 60,
          std::to_string(mismatches) + " mismatches / 1000, DSC identity " + fmt("%.3e", identity) + ", " +
              fmt("%.1f", t) + " s"};
}

// 8. The lighter model learns synthetic ellipse segmentation; training is reproducible.
Verdict synthetic_training() {
  const auto t0 = clock_type::now();
  RandomSource rng(7);
  std::vector<model::Sample> all;
  for (int i = 0; i < 200; ++i) {
    auto s = data::generate_ellipse_slice(rng);
    all.push_back({Tensor(Shape{1, 64, 64}, s.image.data), s.mask});
  }
  const std::vector<model::Sample> train(all.begin(), all.begin() + 140), val(all.begin() + 140, all.begin() + 170),
      test(all.begin() + 170, all.end());
  auto cfg = model::ModelConfig::lighter();
  cfg.input_extent = 64;
  model::FitOptions fo;
  fo.epochs = 10;
  fo.batch_size = 4;
  fo.optimizer = {model::OptimizerKind::adam, 2e-3};
  fo.seed = 1;
  const auto init = model::init_parameters(cfg, 1);
  const auto result = model::fit(train, val, cfg, init, fo);
  const double train_s = seconds_since(t0);

  const auto reports = model::evaluate_samples(test, result.best_params, cfg);
  double dsc_sum = 0;
  std::size_t dsc_n = 0;
  std::vector<double> hd;
  for (const auto& r : reports) {
    if (r.dsc) {
      dsc_sum += *r.dsc;
      ++dsc_n;
    }
    hd.push_back(r.hd95.value_or(INFINITY));
  }
  std::sort(hd.begin(), hd.end());
  const double mean_dsc = dsc_n ? dsc_sum / double(dsc_n) : 0;
  const double median_hd = hd.size() % 2 ? hd[hd.size() / 2] : (hd[hd.size() / 2 - 1] + hd[hd.size() / 2]) / 2;

  auto again_opts = fo;
  again_opts.epochs = 1;
  const auto again = model::fit(train, val, cfg, init, again_opts);
  const std::size_t steps = again.step_losses.size();
  const bool reproducible = steps > 0 && result.step_losses.size() >= steps &&
                            std::equal(again.step_losses.begin(), again.step_losses.end(), result.step_losses.begin());

  return {mean_dsc >= 0.85 && median_hd <= 5 && train_s <= 1800 && reproducible,
          "test DSC " + fmt("%.4f", mean_dsc) + ", median HD95 " + fmt("%.3f", median_hd) + " px, best epoch " +
              std::to_string(result.best_epoch) + ", training " + fmt("%.0f", train_s) + " s, first epoch " +
              (reproducible ? "bit-identical on rerun" : "DIFFERS on rerun")};
}

// 9. NIfTI reader: fixture round trip, fuzzing, and named errors.
Verdict nifti_io() {
  const auto fixture = mhunet::testing::int16_fixture();
  std::vector<std::uint8_t> image_bytes;
  const auto img = data::parse_nifti1(fixture, &image_bytes);
  const bool round_trip = data::write_nifti1(img.header, img.volume) == fixture;

  const auto tally = mhunet::testing::fuzz_nifti(909, 10000);

  auto field_of = [](std::vector<std::uint8_t> b) -> std::string {
    try {
      data::parse_nifti1(b);
    } catch (const ParseError& e) {
      return e.field();
    }
    return "none";
  };
  auto bad_magic = fixture;
  std::memcpy(&bad_magic[344], "xxxx", 4);
  auto bad_type = fixture;
  const std::int16_t unsupported = 128;  // RGB24
  std::memcpy(&bad_type[70], &unsupported, 2);
  const bool named = field_of(bad_magic) == "magic" && field_of(bad_type) == "datatype";

  return {round_trip && tally.other_failures == 0 && named,
          std::string("round trip ") + (round_trip ? "byte-exact" : "DIFFERS") + ", fuzz " +
              std::to_string(tally.parsed) + " parsed / " + std::to_string(tally.parse_errors) + " rejected / " +
              std::to_string(tally.other_failures) + " crashes, named errors " + (named ? "ok" : "WRONG")};
}

std::string slurp(const fs::path& p) {
  auto b = data::read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

// 10. Preprocess, train, and eval twice with the same seed produce identical artifacts.
Verdict pipeline_reproducible() {
  const fs::path root = fs::temp_directory_path() / "mhunet_acceptance_pipeline";
  fs::remove_all(root);
  auto run = [](const std::string& command, const std::vector<std::string>& overrides) {
    cli::RunConfig rc;
    rc.set("run.deterministic", "true");
    for (const auto& o : overrides) rc.apply_override(o);
    std::ostringstream out, err;
    const int code = cli::run_command(command, rc, out, err);
    if (code != 0) std::fprintf(stderr, "%s failed (%d): %s\n", command.c_str(), code, err.str().c_str());
    return code;
  };
  const std::vector<std::string> toy = {"data.extent=32",    "model.preset=lighter", "model.embed_dim=4",
                                        "model.depths=1,1",  "model.state_dim=4",    "train.optimizer=adam",
                                        "train.lr=0.003",    "train.batch_size=2",   "train.epochs=2",
                                        "run.seed=13"};
  const auto raw = root / "raw";
  if (run("synth", {"run.out=" + raw.string(), "synth.patients=5", "synth.slices=2", "synth.extent=40",
                    "run.seed=5"}) != 0)
    return {false, "synth failed"};

  std::vector<std::string> artifacts[2];
  for (int k = 0; k < 2; ++k) {
    const auto pre = root / ("pre" + std::to_string(k)), out = root / ("out" + std::to_string(k));
    auto cfg = toy;
    cfg.push_back("run.out=" + pre.string());
    cfg.push_back("data.input=" + raw.string());
    if (run("preprocess", cfg) != 0) return {false, "preprocess failed"};
    cfg = toy;
    cfg.push_back("run.out=" + out.string());
    cfg.push_back("data.dataset=" + pre.string());
    if (run("train", cfg) != 0) return {false, "train failed"};
    cfg.push_back("eval.checkpoint=" + (out / "model.ckpt").string());
    if (run("eval", cfg) != 0) return {false, "eval failed"};
    artifacts[k] = {slurp(pre / "manifest.tsv"), slurp(out / "train_log.tsv"), slurp(out / "model.ckpt"),
                    slurp(out / "metrics.json")};
  }
  const char* names[] = {"manifest.tsv", "train_log.tsv", "model.ckpt", "metrics.json"};
  std::string differing;
  for (std::size_t i = 0; i < 4; ++i)
    if (artifacts[0][i] != artifacts[1][i]) differing += std::string(differing.empty() ? "" : ", ") + names[i];
  fs::remove_all(root);
  return {differing.empty(), differing.empty() ? "manifest, train log, checkpoint, metrics byte-identical"
                                               : "differing: " + differing};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"recurrent-vs-convolution", recurrent_vs_convolution},
      {"fft-vs-direct-convolution", fft_matches_direct},
      {"bilinear-discretization", bilinear_hand_formulas},
      {"gradient-checks", gradients},
      {"selective-scan-lti-and-causality", selective_scan_properties},
      {"base-model-shapes-and-size", base_model_shapes},
      {"metric-oracles", metric_oracles},
      {"synthetic-segmentation", synthetic_training},
      {"nifti-reader", nifti_io},
      {"pipeline-reproducibility", pipeline_reproducible},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s %2zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures ? 1 : 0;
}
