// Acceptance suite. `acceptance` runs every criterion; `acceptance N` runs one.
// Each criterion prints exactly one PASS/FAIL line.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cswin/cswin.hpp"
#include "cswin/gradcheck_suite.hpp"
#include "oracles.hpp"

using namespace cswin;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double randomize(Tensor<double>& t, Rng& rng, double scale) {
  for (double& v : t.data()) v = rng.uniform(-scale, scale);
  return scale;
}

// ---------------------------------------------------------------- criteria

Outcome complexity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = NetworkConfig::standard();
  const double params = static_cast<double>(count_params(cfg));
  const double flops = static_cast<double>(count_flops(cfg));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double dp = (params - 23.57e6) / 23.57e6, df = (flops - 4.72e9) / 4.72e9;
  const bool ok = std::abs(dp) <= 0.2 && std::abs(df) <= 0.2 && secs < 1.0;
  return {ok, fmt("params %.3fM (%+.1f%%), FLOPs %.3fG (%+.1f%%)", params / 1e6, dp * 100, flops / 1e9, df * 100) +
                  fmt(", %.3fs", secs)};
}

Outcome stripe_oracle() {
  Rng rng(101);
  double worst = 0;
  std::size_t configs = 0;
  while (configs < 60) {
    const std::size_t sw = std::size_t{1} << rng.below(4);  // 1, 2, 4, 8
    const std::size_t h = sw * (1 + rng.below(16 / sw)), w = sw * (1 + rng.below(16 / sw));
    const std::size_t heads = 2 * (1 + rng.below(2)), c = heads * (1 + rng.below(3));
    const AttentionConfig acfg{heads, sw, c, false};
    auto p = CSWinBlockParams<double>::init(c, 2, false, rng);
    for (Tensor<double>* t : {&p.wq, &p.wk, &p.wv, &p.wo}) randomize(*t, rng, 0.8);
    Tensor<double> x = uniform_tensor<double>({h, w, c}, rng);
    const Tensor<double> got = cswin_attention(x, p, acfg);
    const Tensor<double> want = oracle::stripe_attention(x, p, heads, sw, false);
    for (std::size_t i = 0; i < got.numel(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    ++configs;
  }
  return {worst < 1e-6, fmt("%.0f configs, max abs err %.2e", static_cast<double>(configs), worst)};
}

Outcome degenerate_global() {
  Rng rng(202);
  double worst = 0;
  std::size_t n = 0;
  for (std::size_t side : {1, 3, 4, 7, 8}) {
    for (std::size_t heads : {2, 4}) {
      const std::size_t c = heads * 2;
      const AttentionConfig acfg{heads, side, c, false};
      auto p = CSWinBlockParams<double>::init(c, 2, false, rng);
      for (Tensor<double>* t : {&p.wq, &p.wk, &p.wv, &p.wo}) randomize(*t, rng, 0.8);
      Tensor<double> x = uniform_tensor<double>({side, side, c}, rng);
      const Tensor<double> got = cswin_attention(x, p, acfg);
      const Tensor<double> want = oracle::stripe_attention(x, p, heads, side, false, /*global=*/true);
      for (std::size_t i = 0; i < got.numel(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
      ++n;
    }
  }
  return {worst < 1e-6, fmt("%.0f configs with sw = H = W, max abs err %.2e", static_cast<double>(n), worst)};
}

Outcome carafe_oracle() {
  Rng rng(303);
  double worst = 0, worst_sum = 0;
  std::size_t configs = 0;
  bool nearest = true;
  for (std::size_t trial = 0; trial < 60; ++trial) {
    const std::size_t sigma = std::size_t{1} << rng.below(3), k = rng.below(2) ? 5 : 3;
    const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6), c = 1 + rng.below(4);
    const UpsampleConfig ucfg{sigma, k, 3, 1 + rng.below(4)};
    auto p = KernelPredictorParams<double>::init(c, ucfg, rng);
    for (double& v : p.encoder_w.data()) v = rng.uniform(-1, 1);
    for (double& v : p.encoder_b.data()) v = rng.uniform(-1, 1);
    const Tensor<double> x = uniform_tensor<double>({h, w, c}, rng);
    const auto field = predict_kernels(x, p, ucfg);
    const std::size_t kk = k * k;
    for (std::size_t px = 0; px < field.weights.numel() / kk; ++px) {
      double s = 0;
      for (std::size_t e = 0; e < kk; ++e) s += field.weights[px * kk + e];
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
    const Tensor<double> got = reassemble(x, field, ucfg);
    const Tensor<double> want = oracle::reassemble(x, field.weights, sigma, k);
    for (std::size_t i = 0; i < got.numel(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));

    // delta kernels: all logits -inf-like except the center
    auto delta = p;
    for (double& v : delta.encoder_w.data()) v = 0;
    for (std::size_t ch = 0; ch < delta.encoder_b.numel(); ++ch) delta.encoder_b[ch] = ch % kk == kk / 2 ? 0.0 : -1000.0;
    const Tensor<double> up = carafe_upsample(x, delta, ucfg);
    for (std::size_t i = 0; i < h * sigma; ++i)
      for (std::size_t j = 0; j < w * sigma; ++j)
        for (std::size_t ch = 0; ch < c; ++ch)
          nearest = nearest && up[((i * w * sigma) + j) * c + ch] == x[((i / sigma) * w + j / sigma) * c + ch];
    ++configs;
  }
  const bool ok = worst < 1e-6 && worst_sum <= 1e-6 && nearest;
  return {ok, fmt("%.0f configs, reassembly err %.2e, kernel-sum err %.2e", static_cast<double>(configs), worst,
                  worst_sum) +
                  (nearest ? ", delta kernels = nearest neighbor" : ", delta kernels DIFFER from nearest neighbor")};
}

Outcome gradient_integrity() {
  GradCheckOptions full;  // every entry of every primitive / component input
  GradCheckOptions sampled;
  sampled.max_entries = 3;
  std::size_t cases = 0, failed = 0, entries = 0;
  std::string first_failure;
  double worst = 0;
  auto run = [&](const GradCheckCase& c, const GradCheckOptions& o) {
    const GradCheckResult r = c.run(o);
    ++cases;
    entries += r.checked;
    worst = std::max(worst, r.max_rel_error);
    if (!r.ok) {
      ++failed;
      if (first_failure.empty()) first_failure = c.name + " (" + r.worst + ")";
    }
  };
  for (const auto& c : primitive_gradcheck_cases()) run(c, full);
  for (const auto& c : component_gradcheck_cases()) run(c, full);
  run(network_gradcheck_case(Upsampler::carafe), sampled);
  std::string detail = fmt("%.0f cases, %.0f entries, max rel err %.2e", static_cast<double>(cases),
                           static_cast<double>(entries), worst);
  if (failed) detail += "; first failure " + first_failure;
  return {failed == 0, detail};
}

Mask random_mask(Rng& rng, std::size_t h, std::size_t w, std::size_t k) {
  Mask m(h, w);
  const int style = static_cast<int>(rng.below(3));
  if (style == 0) {
    for (auto& l : m.labels) l = static_cast<std::uint8_t>(rng.below(k));
  } else {
    // a few random rectangles, possibly none
    const std::size_t n = rng.below(4);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t i0 = rng.below(h), j0 = rng.below(w);
      const std::size_t i1 = i0 + rng.below(h - i0) + 1, j1 = j0 + rng.below(w - j0) + 1;
      const auto cls = static_cast<std::uint8_t>(1 + rng.below(k - 1));
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) m(i, j) = cls;
    }
  }
  return m;
}

Outcome metric_oracles() {
  Rng rng(404);
  std::size_t hd_mismatch = 0, conf_mismatch = 0, checks = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.below(32), w = 1 + rng.below(32), k = 2 + rng.below(3);
    const Mask p = random_mask(rng, h, w, k), g = random_mask(rng, h, w, k);
    for (std::size_t c = 0; c < k; ++c) {
      const auto cls = static_cast<std::uint8_t>(c);
      const auto got = hausdorff(p, g, cls);
      const auto want = oracle::hausdorff(p, g, cls);
      hd_mismatch += got.hd != want.hd || got.hd95 != want.hd95;
      const auto cm = oracle::confusion(p, g, cls);
      const double d = 2 * cm.tp + cm.fp + cm.fn == 0 ? 1.0
                                                      : 2.0 * static_cast<double>(cm.tp) /
                                                            static_cast<double>(2 * cm.tp + cm.fp + cm.fn);
      conf_mismatch += dsc(p, g, cls) != d;
      ++checks;
    }
    const Mask pb = binarize(p), gb = binarize(g);
    const auto cm = oracle::confusion(pb, gb, 1);
    auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 1.0; };
    const auto s = se_sp_acc(pb, gb);
    conf_mismatch += s.se != ratio(cm.tp, cm.tp + cm.fn) || s.sp != ratio(cm.tn, cm.tn + cm.fp) ||
                     s.acc != ratio(cm.tp + cm.tn, pb.size());
  }
  double ce_err = 0;
  for (std::size_t k = 2; k <= 9; ++k) {
    Mask labels(5, 7);
    for (auto& l : labels.labels) l = static_cast<std::uint8_t>(rng.below(k));
    const Tensor<double> logits({5, 7, k}, 0.37);
    ce_err = std::max(ce_err, std::abs(cross_entropy_loss(logits, labels).item() - std::log(static_cast<double>(k))));
  }
  const bool ok = hd_mismatch == 0 && conf_mismatch == 0 && ce_err <= 1e-6;
  return {ok, fmt("100 mask pairs (%.0f class checks): HD mismatches %.0f, confusion mismatches %.0f, |CE - ln K| %.1e",
                  static_cast<double>(checks), static_cast<double>(hd_mismatch), static_cast<double>(conf_mismatch),
                  ce_err)};
}

std::vector<SegmentationSample<float>> tiny_dataset(std::size_t n, std::uint64_t seed) {
  std::vector<SegmentationSample<float>> data;
  Rng master(seed);
  for (std::size_t i = 0; i < n; ++i) {
    auto [img, mask] = synth_sample(64, 4, master.next());
    data.push_back({"s" + std::to_string(i), to_tensor<float>(img), std::move(mask)});
  }
  return data;
}

TrainConfig tiny_train_config(std::size_t iterations, std::size_t batch) {
  TrainConfig tc;
  tc.optimizer.lr = 0.05;
  tc.optimizer.momentum = 0.9;
  tc.optimizer.weight_decay = 1e-4;
  tc.optimizer.batch_size = batch;
  tc.optimizer.max_iterations = iterations;
  tc.optimizer.seed = 1;
  tc.loss = {0.4, 0.6, 1e-5};
  tc.augment = true;
  tc.init_seed = 2;
  return tc;
}

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const NetworkConfig cfg = NetworkConfig::tiny();
  const auto data = tiny_dataset(8, 77);
  const TrainConfig tc = tiny_train_config(300, 8);
  auto st = TrainState<float>::fresh(cfg, tc);
  const auto curve = train(st, cfg, data, tc);
  const MetricsReport rep = evaluate(data, st.params, cfg);
  const double ratio = curve.back().loss / curve.front().loss;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = rep.mean_dsc() >= 0.9 && ratio < 0.25;
  return {ok, fmt("mean train DSC %.4f, loss %.4f -> %.4f (%.1f%%)", rep.mean_dsc(), curve.front().loss,
                  curve.back().loss, ratio * 100) +
                  fmt(", %.0fs", secs)};
}

Outcome ablation_axes() {
  std::size_t forwards = 0, bad_shapes = 0;
  Rng rng(505);
  for (Upsampler u : {Upsampler::carafe, Upsampler::bilinear, Upsampler::transposed_conv}) {
    for (std::size_t skips = 0; skips <= 3; ++skips) {
      NetworkConfig cfg = NetworkConfig::tiny();
      cfg.upsampler = u;
      cfg.skip_connections = skips;
      const auto p = init_params<float>(cfg, 9);
      const Tensor<float> x = uniform_tensor<float>({64, 64, 3}, rng, 0, 1);
      const Tensor<float> y = forward(x, p, cfg);
      bool finite = true;
      for (float v : y.data()) finite = finite && std::isfinite(v);
      bad_shapes += y.shape() != Shape{64, 64, cfg.num_classes} || !finite;
      ++forwards;
    }
  }
  const std::vector<std::pair<double, double>> weights{{1, 0}, {0, 1}, {0.5, 0.5}, {0.4, 0.6}, {0.6, 0.4}, {0.3, 0.7}};
  const NetworkConfig cfg = NetworkConfig::tiny();
  const auto data = tiny_dataset(8, 78);
  std::size_t nan_runs = 0;
  std::string failures;
  for (const auto& [a, b] : weights) {
    TrainConfig tc = tiny_train_config(50, 4);
    tc.loss.alpha = a;
    tc.loss.beta = b;
    auto st = TrainState<float>::fresh(cfg, tc);
    try {
      const auto curve = train(st, cfg, data, tc);
      bool finite = true;
      for (const auto& pt : curve) finite = finite && std::isfinite(pt.loss);
      if (!finite) throw NumericError("non-finite curve");
    } catch (const NumericError& e) {
      ++nan_runs;
      failures += fmt(" [%.1f,%.1f]", a, b);
    }
  }
  const bool ok = bad_shapes == 0 && nan_runs == 0;
  return {ok, fmt("%.0f upsampler x skip forwards (%.0f bad), %.0f loss-weight runs x 50 it (%.0f non-finite)",
                  static_cast<double>(forwards), static_cast<double>(bad_shapes),
                  static_cast<double>(weights.size()), static_cast<double>(nan_runs)) +
                  failures};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

Outcome determinism() {
  const NetworkConfig cfg = NetworkConfig::tiny();
  const auto data = tiny_dataset(4, 79);
  const TrainConfig tc = tiny_train_config(50, 2);
  auto run = [&] {
    auto st = TrainState<float>::fresh(cfg, tc);
    train(st, cfg, data, tc);
    return encode_checkpoint(make_checkpoint<float>(cfg, st.params, &st.optimizer, st.iteration, st.rng.state()));
  };
  const std::string a = run(), b = run();
  const bool same_ckpt = a == b;

  const fs::path dir = fs::temp_directory_path() / ("cswin_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::vector<std::string> broken;
  // CKPT1: bytes -> file -> load -> bytes
  {
    const auto ck = decode_checkpoint<float>(a);
    save_checkpoint((dir / "a.ckpt").string(), ck);
    if (slurp(dir / "a.ckpt") != a || encode_checkpoint(load_checkpoint<float>((dir / "a.ckpt").string())) != a)
      broken.push_back("CKPT1");
  }
  // TSR1
  {
    Rng rng(1);
    const auto t = uniform_tensor<double>({3, 5, 2}, rng);
    save_tensor((dir / "t.tsr").string(), t);
    const auto u = load_tensor<double>((dir / "t.tsr").string());
    save_tensor((dir / "u.tsr").string(), u);
    if (u.shape() != t.shape() || u.vec() != t.vec() || slurp(dir / "t.tsr") != slurp(dir / "u.tsr")) broken.push_back("TSR1");
  }
  // PGM / PPM / manifest via the generator, then re-encode
  {
    const auto m = synth_generate((dir / "ds").string(), 3, 32, 4, 5, 1, 1);
    const auto img = read_ppm((dir / "ds" / m.samples[0].image).string());
    const auto mask = read_pgm((dir / "ds" / m.samples[0].mask).string());
    write_ppm((dir / "re.ppm").string(), img);
    write_pgm((dir / "re.pgm").string(), mask);
    if (slurp(dir / "re.ppm") != slurp(dir / "ds" / m.samples[0].image)) broken.push_back("PPM");
    if (slurp(dir / "re.pgm") != slurp(dir / "ds" / m.samples[0].mask)) broken.push_back("PGM");
    const auto back = read_manifest((dir / "ds" / "manifest.json").string());
    if (to_json(back).dump(2) + "\n" != slurp(dir / "ds" / "manifest.json")) broken.push_back("manifest");
  }
  // JSON configs
  {
    const auto cfg_std = NetworkConfig::standard();
    write_json_file((dir / "net.json").string(), to_json(cfg_std));
    const auto back = load_network_config((dir / "net.json").string());
    write_json_file((dir / "net2.json").string(), to_json(back));
    if (!(back == cfg_std) || slurp(dir / "net.json") != slurp(dir / "net2.json")) broken.push_back("network config");
    const TrainConfig tcb = train_config_from_json(to_json(tc));
    if (to_json(tcb).dump() != to_json(tc).dump()) broken.push_back("train config");
  }
  fs::remove_all(dir);
  std::string detail = std::string("50-iteration checkpoints ") + (same_ckpt ? "identical" : "DIFFER") + " (" +
                       std::to_string(a.size()) + " bytes); formats round-trip: ";
  detail += broken.empty() ? "CKPT1 TSR1 PGM PPM manifest configs" : "BROKEN";
  for (const auto& s : broken) detail += " " + s;
  return {same_ckpt && broken.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{{"complexity calibration", complexity},
                                        {"stripe-attention oracle", stripe_oracle},
                                        {"degenerate-global equivalence", degenerate_global},
                                        {"CARAFE oracle", carafe_oracle},
                                        {"gradient integrity", gradient_integrity},
                                        {"metric oracles", metric_oracles},
                                        {"overfit harness", overfit},
                                        {"ablation-axis structure", ablation_axes},
                                        {"determinism and round trips", determinism}};
  std::vector<std::size_t> which;
  for (int i = 1; i < argc; ++i) {
    const long n = std::strtol(argv[i], nullptr, 10);
    if (n < 1 || n > static_cast<long>(criteria.size())) {
      std::cerr << "usage: acceptance [criterion 1-" << criteria.size() << "]...\n";
      return 2;
    }
    which.push_back(static_cast<std::size_t>(n - 1));
  }
  if (which.empty())
    for (std::size_t i = 0; i < criteria.size(); ++i) which.push_back(i);

  std::size_t failed = 0;
  for (std::size_t i : which) {
    Outcome o{false, ""};
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << i + 1 << "] " << criteria[i].name << ": " << o.detail << '\n'
              << std::flush;
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
