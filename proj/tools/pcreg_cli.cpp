// pcreg: data generation, training, registration and evaluation from the
// command line. Every failure exits with status 1 and a one-line reason.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pcreg/gradcheck.hpp"
#include "pcreg/io.hpp"
#include "pcreg/metrics.hpp"
#include "pcreg/model.hpp"
#include "pcreg/synthdata.hpp"
#include "pcreg/trainer.hpp"

namespace fs = std::filesystem;
using namespace pcreg;

namespace {

struct Size {
  std::int64_t height = 64;
  std::int64_t width = 64;
};

Size parse_size(const std::string& s) {
  const auto x = s.find('x');
  Size out;
  try {
    if (x == std::string::npos) throw std::invalid_argument("");
    std::size_t used = 0;
    out.height = std::stoll(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("");
    out.width = std::stoll(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw std::invalid_argument("--size must look like HxW, got '" + s + "'");
  }
  if (out.height < 1 || out.width < 1) throw std::invalid_argument("--size must be positive");
  return out;
}

std::string numbered(const char* stem, std::int64_t i, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04lld_%s.pgm", stem, static_cast<long long>(i), what);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw io::FormatError("cannot create directory " + dir.string());
}

// --- gen-data ---------------------------------------------------------------

struct GenArgs {
  std::string kind = "pairs";
  std::string out;
  std::uint64_t seed = 0;
  std::int64_t count = 0;  // 0: 160 pairs or 8 frames
  std::string size = "64x64";
};

void gen_data(GenArgs a) {
  const Size size = parse_size(a.size);
  if (a.count == 0) a.count = a.kind == "pairs" ? 160 : 8;
  if (a.count < 1) throw std::invalid_argument("--count must be at least 1");
  const fs::path dir(a.out);
  ensure_dir(dir);
  std::vector<io::ManifestEntry> entries;
  if (a.kind == "pairs") {
    synth::GeneratorConfig g;
    g.height = size.height;
    g.width = size.width;
    g.seed = a.seed;
    g.validate();
    for (std::int64_t i = 0; i < a.count; ++i) {
      const synth::ImagePair p = synth::generate_pair(g, static_cast<std::uint64_t>(i));
      io::ManifestEntry e{i, io::split_for_index(i, a.count), numbered("pair", i, "moving"),
                          numbered("pair", i, "fixed"), ""};
      io::save_pgm(dir / e.moving, p.moving);
      io::save_pgm(dir / e.fixed, p.fixed);
      entries.push_back(std::move(e));
    }
  } else {
    synth::ScanSequenceConfig c;
    c.n_frames = static_cast<int>(a.count);
    c.height = size.height;
    c.width = size.width;
    c.seed = a.seed;
    c.validate();
    const synth::ScanSequence seq = synth::generate_scan_sequence(c);
    for (std::int64_t i = 0; i < a.count; ++i) {
      const auto k = static_cast<std::size_t>(i);
      io::ManifestEntry e{i, "scan", numbered("frame", i, "moving"), numbered("frame", i, "fixed"),
                          numbered("frame", i, "truth")};
      io::save_pgm(dir / e.moving, seq.moving[k]);
      io::save_pgm(dir / e.fixed, seq.fixed[k]);
      io::save_pgm(dir / e.truth, seq.truth[k]);
      entries.push_back(std::move(e));
    }
  }
  io::write_manifest(dir, entries);
  std::cout << "wrote " << a.count << (a.kind == "pairs" ? " pairs" : " frames") << " to "
            << dir.string() << "\n";
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string preset = "desk";
  std::string ablate = "full";
  std::uint64_t seed = 0;
  int epochs = -1;
  std::string log;
  bool quiet = false;
};

void check_size(const Dataset& d, std::int64_t size, const std::string& preset) {
  for (const Sample& s : d) {
    if (s.moving.height != size || s.moving.width != size || s.fixed.height != size ||
        s.fixed.width != size) {
      throw std::invalid_argument("preset " + preset + " expects " + std::to_string(size) + "x" +
                                  std::to_string(size) + " images; pair " + s.id + " is " +
                                  std::to_string(s.moving.height) + "x" +
                                  std::to_string(s.moving.width));
    }
  }
}

void train_cmd(const TrainArgs& a) {
  Preset preset = Preset::from_name(a.preset);
  ModelConfig mc;
  mc.seed = a.seed;
  mc.ablation = AblationConfig::from_name(a.ablate);
  mc.validate();

  Dataset train_set = io::load_split(a.data, "train");
  Dataset val_set = io::load_split(a.data, "val");
  if (preset.max_train > 0 && train_set.size() > preset.max_train) train_set.resize(preset.max_train);
  if (preset.max_val > 0 && val_set.size() > preset.max_val) val_set.resize(preset.max_val);
  check_size(train_set, preset.image_size, preset.name);
  check_size(val_set, preset.image_size, preset.name);

  TrainConfig tc = preset.train;
  tc.seed = a.seed;
  tc.loss.gamma = mc.ablation.aux_gamma;
  if (a.epochs >= 0) tc.epochs = a.epochs;

  PCRegNet model(mc);
  if (tc.epochs == 0) {
    model.set_training(false);
    io::save_checkpoint(a.out, model, tc.adam);
    if (!a.log.empty()) io::write_file_atomic(a.log, epoch_log_csv({}));
    return;
  }
  const TrainResult result = train(model, train_set, val_set, tc, [&](const EpochLog& e) {
    if (a.quiet) return;
    std::printf("epoch %3d  lr %.3e  loss %.6f (final %.6f, aux %.6f)", e.epoch, e.lr, e.loss,
                e.loss_final, e.loss_aux);
    if (e.validated) {
      std::printf("  val ncc moving %.4f coarse %.4f refined %.4f  ssim %.4f  psnr %.2f",
                  e.ncc_moving, e.ncc_coarse, e.ncc_refined, e.ssim_refined, e.psnr_refined);
    }
    std::printf("\n");
    std::fflush(stdout);
  });
  io::save_checkpoint(a.out, model, tc.adam);
  if (!a.log.empty()) io::write_file_atomic(a.log, epoch_log_csv(result.log));
}

// --- register ---------------------------------------------------------------

struct RegisterArgs {
  std::string ckpt, moving, fixed, out, coarse;
};

void register_cmd(const RegisterArgs& a) {
  PCRegNet model = io::model_from_checkpoint(io::load_checkpoint(a.ckpt));
  const metrics::Image moving = io::load_pgm(a.moving);
  const metrics::Image fixed = io::load_pgm(a.fixed);
  if (moving.height != fixed.height || moving.width != fixed.width) {
    throw std::invalid_argument("moving and fixed images differ in size");
  }
  const Registered r = register_pair(model, moving, fixed);
  io::save_pgm(a.out, metrics::clamp01(r.refined));
  if (!a.coarse.empty()) io::save_pgm(a.coarse, metrics::clamp01(r.coarse));
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, report;
  std::string split = "test";
  std::string compare = "refined";
};

void eval_cmd(const EvalArgs& a) {
  const Dataset data = io::load_split(a.data, a.split);
  if (data.empty()) throw std::invalid_argument("split '" + a.split + "' of " + a.data + " is empty");
  metrics::MetricsReport report;
  if (a.compare == "moving" || a.compare == "fixed") {
    for (const Sample& s : data) {
      report.per_pair.push_back(
          metrics::evaluate_pair(s.id, a.compare == "moving" ? s.moving : s.fixed, s.fixed));
    }
  } else {
    if (a.ckpt.empty()) throw std::invalid_argument("--ckpt is required for --compare " + a.compare);
    PCRegNet model = io::model_from_checkpoint(io::load_checkpoint(a.ckpt));
    const Evaluation ev = evaluate(model, data, 8);
    report.per_pair = a.compare == "coarse" ? ev.coarse : ev.refined;
  }
  io::write_report(a.report, report);
  const auto m = report.aggregate();
  std::printf("n_pairs %zu  ncc %.6f  ssim %.6f  psnr_db %.6f\n", report.per_pair.size(), m.ncc,
              m.ssim, m.psnr);
}

// --- eval-temporal ----------------------------------------------------------

struct TemporalArgs {
  std::string ckpt, data, report;
  std::string even = "registered";
};

void eval_temporal_cmd(const TemporalArgs& a) {
  const io::ScanData scan = io::load_scan(a.data);
  if (scan.fixed.size() < 2) throw std::invalid_argument("a scan needs at least 2 frames");
  std::optional<PCRegNet> model;
  if (a.even == "registered") {
    if (a.ckpt.empty()) throw std::invalid_argument("--ckpt is required for --even registered");
    model.emplace(io::model_from_checkpoint(io::load_checkpoint(a.ckpt)));
  }
  metrics::FrameSequence merged, odd_only;
  merged.source = metrics::FrameSequence::Source::kMerged;
  odd_only.source = metrics::FrameSequence::Source::kOddOnly;
  metrics::MetricsReport report;
  for (std::size_t i = 0; i < scan.fixed.size(); ++i) {
    const metrics::Image& odd = scan.fixed[i];
    metrics::Image even;
    if (a.even == "registered") {
      even = metrics::clamp01(register_pair(*model, scan.moving[i], odd).refined);
    } else if (a.even == "truth") {
      even = metrics::split_columns(scan.truth[i]).even;
    } else {
      even = scan.moving[i];
    }
    report.per_pair.push_back(metrics::evaluate_pair(std::to_string(i), even, odd));
    merged.frames.push_back(metrics::merge_frame(odd, even));
    odd_only.frames.push_back(odd);
  }
  metrics::TemporalMetrics t;
  t.tncc = metrics::tncc(merged);
  t.tncc_ref = metrics::tncc(odd_only);
  t.tncg = metrics::tncg(t.tncc, t.tncc_ref);
  report.temporal = t;
  io::write_report(a.report, report);
  std::printf("frames %zu  tncc %.6f  tncc_ref %.6f  tncg %.6f\n", scan.fixed.size(), t.tncc,
              t.tncc_ref, t.tncg);
}

// --- grad-check -------------------------------------------------------------

int grad_check_cmd(int seeds, bool f64) {
  const double tol = f64 ? 1e-6 : 1e-2;
  int failed = 0;
  std::printf("%-18s %-12s %s\n", "case", "worst", f64 ? "(64-bit)" : "(32-bit)");
  for (const GradCase& c : gradient_suite()) {
    const GradCaseResult r = run_grad_case(c, 0, seeds, f64);
    const bool ok = r.worst < tol;
    failed += ok ? 0 : 1;
    std::printf("%-18s %.3e  %s (seed %llu, analytic %.6g, numeric %.6g)\n", r.name.c_str(),
                r.worst, ok ? "ok" : "FAIL", static_cast<unsigned long long>(r.worst_seed),
                r.report.worst_analytic, r.report.worst_numeric);
  }
  std::printf("%s: tolerance %.0e over %d seeds\n", failed == 0 ? "all passed" : "FAILED", tol,
              seeds);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcreg: two-stage image registration with contrast feedback"};
  app.require_subcommand(1);
  app.failure_message(
      [](const CLI::App*, const CLI::Error& err) { return "error: " + std::string(err.what()) + "\n"; });

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic pair or scan dataset");
  g->add_option("--kind", gen.kind)->check(CLI::IsMember({"pairs", "scan"}));
  g->add_option("--out", gen.out)->required();
  g->add_option("--seed", gen.seed);
  g->add_option("--count", gen.count, "pairs (default 160), or frames for a scan (default 8)");
  g->add_option("--size", gen.size, "HxW");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and write a checkpoint");
  t->add_option("--data", tr.data)->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out)->required();
  t->add_option("--preset", tr.preset)->check(CLI::IsMember({"desk", "full"}));
  t->add_option("--ablate", tr.ablate)
      ->check(CLI::IsMember({"full", "no-contrast", "no-injection", "single-stage", "no-aux"}));
  t->add_option("--seed", tr.seed);
  t->add_option("--epochs", tr.epochs, "override the preset's epoch count; 0 saves the initial weights")
      ->check(CLI::NonNegativeNumber);
  t->add_option("--log", tr.log, "per-epoch CSV log");
  t->add_flag("--quiet", tr.quiet);

  RegisterArgs rg;
  auto* r = app.add_subcommand("register", "Register one moving image onto a fixed image");
  r->add_option("--ckpt", rg.ckpt)->required()->check(CLI::ExistingFile);
  r->add_option("--moving", rg.moving)->required()->check(CLI::ExistingFile);
  r->add_option("--fixed", rg.fixed)->required()->check(CLI::ExistingFile);
  r->add_option("--out", rg.out, "refined output")->required();
  r->add_option("--coarse", rg.coarse, "also write the coarse output here");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Pairwise metrics over a dataset split");
  e->add_option("--ckpt", ev.ckpt)->check(CLI::ExistingFile);
  e->add_option("--data", ev.data)->required()->check(CLI::ExistingDirectory);
  e->add_option("--report", ev.report)->required();
  e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--compare", ev.compare, "image compared against fixed")
      ->check(CLI::IsMember({"refined", "coarse", "moving", "fixed"}));

  TemporalArgs tp;
  auto* tt = app.add_subcommand("eval-temporal", "Temporal consistency of a merged scan");
  tt->add_option("--ckpt", tp.ckpt)->check(CLI::ExistingFile);
  tt->add_option("--data", tp.data)->required()->check(CLI::ExistingDirectory);
  tt->add_option("--report", tp.report)->required();
  tt->add_option("--even", tp.even, "source of the even columns")
      ->check(CLI::IsMember({"registered", "truth", "moving"}));

  std::int64_t base = 32;
  auto* p = app.add_subcommand("params", "Print the trainable parameter count");
  p->add_option("--base-channels", base)->check(CLI::PositiveNumber);

  int seeds = 5;
  bool f64 = false;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every primitive");
  gc->add_option("--seeds", seeds)->check(CLI::PositiveNumber);
  gc->add_flag("--f64", f64, "64-bit analytic gradients, tolerance 1e-6");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*g) gen_data(gen);
    if (*t) train_cmd(tr);
    if (*r) register_cmd(rg);
    if (*e) eval_cmd(ev);
    if (*tt) eval_temporal_cmd(tp);
    if (*p) {
      ModelConfig mc;
      mc.base_channels = base;
      std::cout << count_parameters(PCRegNet(mc)) << "\n";
    }
    if (*gc) return grad_check_cmd(seeds, f64);
  } catch (const std::exception& err) {
    std::string msg = err.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}
