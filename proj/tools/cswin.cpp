// cswin: command-line front end (synth | train | eval | predict | gradcheck | count | bench).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cswin/cswin.hpp"
#include "cswin/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace cswin;

namespace {

struct SynthArgs {
  std::string out;
  std::size_t n = 8, size = 64, classes = 4, n_val = 0, n_test = 0;
  std::uint64_t seed = 7;
};

int run_synth(const SynthArgs& a) {
  const DatasetManifest m = synth_generate(a.out, a.n, a.size, a.classes, a.seed, a.n_val, a.n_test);
  std::cout << "wrote " << m.samples.size() << " samples to " << (fs::path(a.out) / "manifest.json").string() << '\n';
  return 0;
}

struct TrainArgs {
  std::string config, train_config, data, out, resume;
  std::size_t iterations = 0;  // 0 keeps the config value
  std::size_t checkpoint_interval = 0;
  std::size_t log_every = 10;
};

void write_checkpoint(const std::string& path, const NetworkConfig& cfg, TrainState<float>& st) {
  save_checkpoint(path, make_checkpoint<float>(cfg, st.params, &st.optimizer, st.iteration, st.rng.state()));
}

int run_train(const TrainArgs& a) {
  const NetworkConfig cfg = load_network_config(a.config);
  TrainConfig tc = train_config_from_json(read_json_file(a.train_config));
  if (a.iterations) tc.optimizer.max_iterations = a.iterations;
  tc.validate();
  const auto train_set = load_split<float>(a.data, Split::train);
  const auto val_set = load_split<float>(a.data, Split::val);
  fs::create_directories(a.out);

  TrainState<float> st = TrainState<float>::fresh(cfg, tc);
  if (!a.resume.empty()) {
    const Checkpoint<float> ck = load_checkpoint<float>(a.resume);
    st.params = restore_params(ck, cfg);
    st.optimizer = restore_optimizer(ck);
    st.rng.set_state(ck.rng_state);
    st.iteration = ck.iteration;
  }

  std::ofstream curve(fs::path(a.out) / "curve.csv");
  std::ofstream val(fs::path(a.out) / "val.csv");
  curve << std::setprecision(9);
  val << std::setprecision(9);
  write_curve_header(curve, cfg.num_classes);
  val << "iteration,mean_dsc,mean_hd,mean_hd95,se,sp,acc\n";

  TrainCallbacks cb;
  cb.on_iteration = [&](const CurvePoint& p) {
    write_curve_row(curve, p);
    if (a.log_every && (p.iteration % a.log_every == 0 || p.iteration == 1)) {
      std::cout << "iter " << p.iteration << "  loss " << p.loss << '\n' << std::flush;
    }
    if (a.checkpoint_interval && p.iteration % a.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "iter_%06zu.ckpt", p.iteration);
      write_checkpoint((fs::path(a.out) / name).string(), cfg, st);
    }
  };
  cb.on_validation = [&](std::size_t it, const MetricsReport& r) {
    val << it << ',' << r.mean_dsc() << ',' << r.mean_hd() << ',' << r.mean_hd95() << ',' << r.se << ',' << r.sp << ','
        << r.acc << '\n';
    std::cout << "val @" << it << "  mean DSC " << r.mean_dsc() << "  mean HD95 " << r.mean_hd95() << '\n';
  };
  train(st, cfg, train_set, tc, val_set, cb);
  const std::string final_path = (fs::path(a.out) / "final.ckpt").string();
  write_checkpoint(final_path, cfg, st);
  std::cout << "checkpoint " << final_path << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", csv;
};

int run_eval(const EvalArgs& a) {
  const Checkpoint<float> ck = load_checkpoint<float>(a.checkpoint);
  const ModelParams<float> p = restore_params(ck);
  const auto samples = load_split<float>(a.data, parse_split(a.split));
  if (samples.empty()) throw DataError("split '" + a.split + "' has no samples");
  const MetricsReport r = evaluate(samples, p, ck.config);

  std::ostringstream csv;
  csv << std::setprecision(9) << "class,dsc,hd,hd95\n";
  for (std::size_t c = 0; c < r.num_classes; ++c) csv << c << ',' << r.dsc[c] << ',' << r.hd[c] << ',' << r.hd95[c] << '\n';
  csv << "mean," << r.mean_dsc() << ',' << r.mean_hd() << ',' << r.mean_hd95() << '\n';
  csv << "se," << r.se << ",,\nsp," << r.sp << ",,\nacc," << r.acc << ",,\n";
  if (!a.csv.empty()) {
    std::ofstream os(a.csv);
    if (!os) throw DataError("cannot write " + a.csv);
    os << csv.str();
  }

  std::cout << r.samples << " samples, split " << a.split << "\n\n";
  std::cout << std::left << std::setw(8) << "class" << std::right << std::setw(10) << "DSC" << std::setw(10) << "HD95"
            << std::setw(10) << "HD" << '\n';
  std::cout << std::fixed << std::setprecision(4);
  for (std::size_t c = 0; c < r.num_classes; ++c) {
    std::cout << std::left << std::setw(8) << c << std::right << std::setw(10) << r.dsc[c] << std::setw(10) << r.hd95[c]
              << std::setw(10) << r.hd[c] << '\n';
  }
  std::cout << std::left << std::setw(8) << "mean" << std::right << std::setw(10) << r.mean_dsc() << std::setw(10)
            << r.mean_hd95() << std::setw(10) << r.mean_hd() << "\n\n";
  std::cout << "SE " << r.se << "  SP " << r.sp << "  ACC " << r.acc << '\n';
  return 0;
}

struct PredictArgs {
  std::string checkpoint, image, out, overlay, truth;
  double min_dsc = -1;  // with --truth: fail below this mean DSC
};

int run_predict(const PredictArgs& a) {
  const Checkpoint<float> ck = load_checkpoint<float>(a.checkpoint);
  const ModelParams<float> p = restore_params(ck);
  const RgbImage img = read_ppm(a.image);
  if (img.height != ck.config.input_size || img.width != ck.config.input_size) {
    throw DataError(a.image + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                    ", network expects " + std::to_string(ck.config.input_size) + " square");
  }
  const Mask pred = predict_mask(to_tensor<float>(img), p, ck.config);
  write_pgm(a.out, pred);
  if (!a.overlay.empty()) write_ppm(a.overlay, overlay(img, pred));
  if (!a.truth.empty()) {
    const Mask truth = read_pgm(a.truth);
    MetricsReport r(ck.config.num_classes);
    r.add(pred, truth);
    std::cout << "mean DSC " << r.mean_dsc() << "  mean HD95 " << r.mean_hd95() << '\n';
    if (r.mean_dsc() < a.min_dsc) {
      std::cerr << "mean DSC below --min-dsc " << a.min_dsc << '\n';
      return 1;
    }
  }
  return 0;
}

struct GradcheckArgs {
  std::string dtype = "f64";
  std::size_t entries = 3;
  bool all_upsamplers = false;
};

int run_gradcheck(const GradcheckArgs& a) {
  if (a.dtype != "f64") throw ConfigError("gradcheck runs in f64 only (got --dtype " + a.dtype + ")");
  auto cases = full_gradcheck_suite();
  if (a.all_upsamplers) {
    cases.push_back(network_gradcheck_case(Upsampler::bilinear));
    cases.push_back(network_gradcheck_case(Upsampler::transposed_conv));
    cases.push_back(network_gradcheck_case(Upsampler::carafe, true));
  }
  GradCheckOptions opt;
  opt.max_entries = a.entries;
  std::size_t failed = 0;
  for (const auto& c : cases) {
    const GradCheckResult r = c.run(opt);
    std::cout << (r.ok ? "ok    " : "FAIL  ") << std::left << std::setw(32) << c.name << " entries " << std::setw(6)
              << r.checked << " max rel err " << std::scientific << std::setprecision(2) << r.max_rel_error
              << std::defaultfloat;
    if (!r.ok) std::cout << "  (" << r.worst << ")";
    std::cout << '\n' << std::flush;
    failed += !r.ok;
  }
  std::cout << cases.size() - failed << "/" << cases.size() << " passed\n";
  return failed ? 1 : 0;
}

struct CountArgs {
  std::string config;
  bool strict = false;
};

int run_count(const CountArgs& a) {
  const NetworkConfig cfg = a.config.empty() ? NetworkConfig::standard() : load_network_config(a.config);
  const double params = static_cast<double>(count_params(cfg));
  const FlopBreakdown f = count_flop_breakdown(cfg);
  const double flops = static_cast<double>(f.total());
  const double dp = (params - kReferenceParams) / kReferenceParams;
  const double df = (flops - kReferenceFlops) / kReferenceFlops;
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "params      " << params / 1e6 << " M   (reference 23.57 M, delta " << std::showpos << dp * 100
            << std::noshowpos << " %)\n";
  std::cout << "FLOPs (MAC) " << flops / 1e9 << " G   (reference 4.72 G, delta " << std::showpos << df * 100
            << std::noshowpos << " %)\n";
  std::cout << "  conv " << static_cast<double>(f.conv) / 1e9 << " G, linear " << static_cast<double>(f.linear) / 1e9
            << " G, attention " << static_cast<double>(f.attention) / 1e9 << " G, upsample "
            << static_cast<double>(f.upsample) / 1e9 << " G\n";
  const bool within = std::abs(dp) <= 0.2 && std::abs(df) <= 0.2;
  if (a.strict && !within) {
    std::cerr << "outside the 20% tolerance of the reference complexity\n";
    return 1;
  }
  return 0;
}

struct BenchArgs {
  std::vector<std::size_t> sizes{14, 28, 56};
  std::vector<std::size_t> sws{1, 2, 7};
  std::size_t channels = 64, heads = 4, repeats = 3;
  std::string csv;
};

int run_bench(const BenchArgs& a) {
  std::ostringstream out;
  out << "H,W,C,heads,sw,cswin_macs,dense_macs,cswin_ms,dense_ms\n";
  Rng rng(1);
  for (std::size_t s : a.sizes) {
    for (std::size_t sw : a.sws) {
      if (sw > s || s % sw != 0) continue;
      const AttentionConfig acfg{a.heads, sw, a.channels, false};
      acfg.validate(s, s);
      const auto p = CSWinBlockParams<float>::init(a.channels, 4, false, rng);
      const Tensor<float> x = uniform_tensor<float>({s, s, a.channels}, rng);
      auto time_ms = [&](auto&& fn) {
        double best = 1e300;
        for (std::size_t r = 0; r < std::max<std::size_t>(a.repeats, 1); ++r) {
          const auto t0 = std::chrono::steady_clock::now();
          fn();
          best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        }
        return best;
      };
      const double ms_cswin = time_ms([&] { (void)cswin_attention(x, p, acfg); });
      const double ms_dense = time_ms([&] { (void)global_attention(x, p, a.heads); });
      out << s << ',' << s << ',' << a.channels << ',' << a.heads << ',' << sw << ','
          << cswin_attention_macs(s, s, a.channels, sw) << ',' << global_attention_macs(s, s, a.channels) << ','
          << ms_cswin << ',' << ms_dense << '\n';
    }
  }
  if (a.csv.empty()) {
    std::cout << out.str();
  } else {
    std::ofstream os(a.csv);
    if (!os) throw DataError("cannot write " + a.csv);
    os << out.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CSWin-UNet segmentation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic shape-segmentation dataset");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--n", synth.n, "number of samples")->check(CLI::PositiveNumber);
  s->add_option("--size", synth.size, "image side in pixels (multiple of 32)");
  s->add_option("--classes", synth.classes, "number of classes including background");
  s->add_option("--seed", synth.seed);
  s->add_option("--val", synth.n_val, "samples assigned to the val split");
  s->add_option("--test", synth.n_test, "samples assigned to the test split");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a network on a dataset manifest");
  t->add_option("--config", tr.config, "network config JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--train-config", tr.train_config, "training config JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "dataset manifest.json")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "output directory for checkpoints and curves")->required();
  t->add_option("--iterations", tr.iterations, "override max_iterations");
  t->add_option("--checkpoint-interval", tr.checkpoint_interval, "also write a checkpoint every N iterations");
  t->add_option("--log-every", tr.log_every, "print the loss every N iterations (0 = quiet)");
  t->add_option("--resume", tr.resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "dataset manifest.json")->required()->check(CLI::ExistingFile);
  e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--csv", ev.csv, "write the metrics report as CSV");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "segment one PPM image");
  p->add_option("--checkpoint", pr.checkpoint)->required()->check(CLI::ExistingFile);
  p->add_option("--image", pr.image, "input PPM")->required()->check(CLI::ExistingFile);
  p->add_option("--out", pr.out, "output mask PGM")->required();
  p->add_option("--overlay", pr.overlay, "optional color overlay PPM");
  auto* truth = p->add_option("--truth", pr.truth, "optional reference mask PGM; prints DSC/HD95")->check(CLI::ExistingFile);
  p->add_option("--min-dsc", pr.min_dsc, "exit nonzero when mean DSC vs --truth is below this")->needs(truth);

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check of every differentiable component");
  g->add_option("--dtype", gc.dtype)->check(CLI::IsMember({"f64", "f32"}));
  g->add_option("--entries", gc.entries, "entries sampled per tensor (0 = all)");
  g->add_flag("--all-upsamplers", gc.all_upsamplers, "also check the network under every upsampler and with LePE");

  CountArgs ct;
  auto* c = app.add_subcommand("count", "analytic parameter and FLOP count");
  c->add_option("--config", ct.config, "network config JSON (default: 224 standard)")->check(CLI::ExistingFile);
  c->add_flag("--strict", ct.strict, "exit nonzero outside 20% of the reference complexity");

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "time stripe attention against dense global attention");
  b->add_option("--sizes", bn.sizes, "square map sides");
  b->add_option("--sw", bn.sws, "stripe widths");
  b->add_option("--channels", bn.channels);
  b->add_option("--heads", bn.heads);
  b->add_option("--repeats", bn.repeats);
  b->add_option("--csv", bn.csv, "write CSV here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*p) return run_predict(pr);
    if (*g) return run_gradcheck(gc);
    if (*c) return run_count(ct);
    if (*b) return run_bench(bn);
  } catch (const Error& err) {
    std::cerr << "error (" << err.kind() << "): " << err.what() << '\n';
    return 2;
  }
  return 0;
}
