// ddrnet command line: gen-data, analyze, gradcheck, train, eval, predict.
//
// Exit codes: 0 success, 1 usage, 2 data/format error, 3 numerical failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ddrnet/checks.hpp"
#include "ddrnet/errors.hpp"
#include "ddrnet/model.hpp"
#include "ddrnet/train.hpp"

namespace fs = std::filesystem;
using namespace ddrnet;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumerical = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Shared {
  std::string config = "desk";
  std::optional<std::uint64_t> seed;
  bool deterministic = true;
  std::string out;
};

void add_shared(CLI::App* cmd, Shared& s) {
  cmd->add_option("--config", s.config, "config JSON path or preset name")->capture_default_str();
  cmd->add_option("--seed", s.seed, "random seed");
  // Every code path is single-threaded with fixed reduction order, so runs
  // are reproducible either way; the flag is kept for interface stability.
  cmd->add_flag("--deterministic,!--no-deterministic", s.deterministic, "bitwise reproducible run (default on)");
  cmd->add_option("--out", s.out, "output directory");
}

NetworkConfig resolve_config(const std::string& spec) {
  for (const std::string& name : preset_names()) {
    if (spec == name) return preset_config(name);
  }
  if (!fs::exists(spec)) throw UsageError("--config: '" + spec + "' is neither a file nor a preset");
  return load_config(spec);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

Dataset require_dataset(const std::string& dir, const std::string& split) {
  if (dir.empty()) throw UsageError("--data is required");
  if (!fs::exists(fs::path(dir) / "manifest.json")) throw UsageError("--data: no manifest.json in '" + dir + "'");
  Dataset d = load_dataset(dir, split);
  if (d.samples.empty()) throw UsageError("--data: no samples with split '" + split + "' in " + dir);
  return d;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  Shared s;
  std::size_t count = 4;
  std::size_t val = 0;
};

int gen_data(const GenDataArgs& a) {
  if (a.s.out.empty()) throw UsageError("gen-data: --out is required");
  if (a.val > a.count) throw UsageError("gen-data: --val exceeds --count");
  const NetworkConfig cfg = resolve_config(a.s.config);
  const Manifest m = generate_dataset(a.s.out, a.count, a.s.seed.value_or(0), gen_config_for(cfg), a.val);
  std::cout << "wrote " << m.samples.size() << " samples to " << a.s.out << "\n";
  return 0;
}

struct AnalyzeArgs {
  Shared s;
  std::string format = "text";
  std::string residual = "ddr";
  std::string aspp = "light";
};

int analyze_cmd(const AnalyzeArgs& a) {
  NetworkConfig cfg = resolve_config(a.s.config);
  AnalyzerOptions opt;
  if (a.residual == "full-bottleneck") opt.residual = Residual3d::FullBottleneck;
  if (a.residual == "full-basic") opt.residual = Residual3d::FullBasic;
  if (a.aspp == "full") opt.aspp = AsppKind::Full;
  const CostReport report = analyze(cfg, opt);
  const std::string text = a.format == "json" ? report.to_json() : report.to_text();
  std::cout << text;
  if (!a.s.out.empty()) {
    write_file(fs::path(a.s.out) / "report.txt", report.to_text());
    write_file(fs::path(a.s.out) / "report.json", report.to_json());
  }
  return 0;
}

struct GradcheckArgs {
  Shared s;
  std::string target = "all";
  std::size_t probes = 50;
  double tolerance = 1e-4;
};

int gradcheck_cmd(const GradcheckArgs& a) {
  std::vector<std::string> targets = gradcheck_targets();
  if (a.target != "all") targets = {a.target};
  bool ok = true;
  for (const std::string& t : targets) {
    const TargetResult r = run_gradcheck_target(t, a.s.seed.value_or(1), {.probes = a.probes});
    const bool pass = r.result.max_rel_error <= a.tolerance && r.result.probes >= a.probes;
    ok = ok && pass;
    std::cout << std::left << std::setw(16) << t << (pass ? " ok  " : " FAIL") << "  max rel err "
              << std::scientific << std::setprecision(3) << r.result.max_rel_error << std::defaultfloat
              << "  probes " << r.result.probes << "  kinks skipped " << r.result.skipped_kinks << "  worst "
              << r.result.worst << "  (" << std::fixed << std::setprecision(2) << r.seconds << " s)"
              << std::defaultfloat << "\n";
  }
  return ok ? 0 : kNumerical;
}

struct TrainArgs {
  Shared s;
  std::string data;
  std::size_t epochs = 1;
  std::string modality;
  std::string resume;
  bool quiet = false;
};

int train_cmd(const TrainArgs& a) {
  if (a.s.out.empty()) throw UsageError("train: --out is required");
  TrainOptions opt;
  opt.epochs = a.epochs;
  opt.out_dir = a.s.out;
  opt.verbose = !a.quiet;
  std::unique_ptr<Trainer> trainer;
  if (!a.resume.empty()) {
    if (!fs::exists(a.resume)) throw UsageError("--resume: no such checkpoint '" + a.resume + "'");
    trainer = Trainer::resume(a.resume, opt);
  } else {
    NetworkConfig cfg = resolve_config(a.s.config);
    if (!a.modality.empty()) cfg.modality = parse_modality(a.modality);
    if (a.s.seed) cfg.init_seed = *a.s.seed;
    trainer = std::make_unique<Trainer>(cfg, opt);
  }
  const Dataset data = require_dataset(a.data, "train");
  trainer->fit(data);
  std::cout << "checkpoint " << (fs::path(a.s.out) / "checkpoint.ckpt").string() << "\n";
  return 0;
}

struct EvalArgs {
  Shared s;
  std::string checkpoint;
  std::string data;
  std::string split = "all";
  std::string format = "text";
};

int eval_cmd(const EvalArgs& a) {
  const auto net = load_network(a.checkpoint);
  const Dataset data = require_dataset(a.data, a.split == "all" ? "" : a.split);
  const MetricsReport report = evaluate_dataset(*net, data);
  std::cout << (a.format == "json" ? report.to_json() : report.to_text());
  if (!a.s.out.empty()) {
    write_file(fs::path(a.s.out) / "metrics.txt", report.to_text());
    write_file(fs::path(a.s.out) / "metrics.json", report.to_json());
  }
  return 0;
}

struct PredictArgs {
  Shared s;
  std::string checkpoint;
  std::string data;
  std::string split = "all";
};

int predict_cmd(const PredictArgs& a) {
  if (a.s.out.empty()) throw UsageError("predict: --out is required");
  const auto net = load_network(a.checkpoint);
  const Dataset data = require_dataset(a.data, a.split == "all" ? "" : a.split);
  fs::create_directories(a.s.out);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const fs::path out = fs::path(a.s.out) / (fs::path(data.names[i]).filename().string() + ".labels.tnsr");
    save_tnsr(out.string(), predict_sample(*net, data.samples[i]));
    std::cout << out.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DDR semantic scene completion engine"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write seeded synthetic scenes and a manifest");
  add_shared(gen_cmd, gen.s);
  gen_cmd->add_option("--count", gen.count, "number of scenes")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--val", gen.val, "trailing scenes tagged as validation")->capture_default_str();

  AnalyzeArgs an;
  auto* an_cmd = app.add_subcommand("analyze", "parameter and FLOP report");
  add_shared(an_cmd, an.s);
  an_cmd->add_option("--format", an.format)->check(CLI::IsMember({"text", "json"}))->capture_default_str();
  an_cmd->add_option("--residual", an.residual, "3D residual unit to cost")
      ->check(CLI::IsMember({"ddr", "full-bottleneck", "full-basic"}))
      ->capture_default_str();
  an_cmd->add_option("--aspp", an.aspp, "ASPP variant to cost")->check(CLI::IsMember({"light", "full"}))->capture_default_str();

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_shared(gc_cmd, gc.s);
  std::vector<std::string> targets = gradcheck_targets();
  targets.push_back("all");
  gc_cmd->add_option("--target", gc.target)->check(CLI::IsMember(targets))->capture_default_str();
  gc_cmd->add_option("--probes", gc.probes)->check(CLI::PositiveNumber)->capture_default_str();
  gc_cmd->add_option("--tolerance", gc.tolerance, "max relative error")->capture_default_str();

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "SGD training with checkpoints and logs");
  add_shared(tr_cmd, tr.s);
  tr_cmd->add_option("--data", tr.data, "dataset directory");
  tr_cmd->add_option("--epochs", tr.epochs, "total epochs to reach")->capture_default_str();
  auto* modality = tr_cmd->add_option("--modality", tr.modality)->check(CLI::IsMember({"rgbd", "depth", "rgb"}));
  auto* resume = tr_cmd->add_option("--resume", tr.resume, "continue from a checkpoint");
  resume->excludes(modality);
  tr_cmd->add_flag("--quiet", tr.quiet, "no per-epoch lines");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "SC and SSC metrics of a checkpoint");
  add_shared(ev_cmd, ev.s);
  ev_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  ev_cmd->add_option("--data", ev.data, "dataset directory");
  ev_cmd->add_option("--split", ev.split, "train, val or all")->capture_default_str();
  ev_cmd->add_option("--format", ev.format)->check(CLI::IsMember({"text", "json"}))->capture_default_str();

  PredictArgs pr;
  auto* pr_cmd = app.add_subcommand("predict", "write predicted label grids");
  add_shared(pr_cmd, pr.s);
  pr_cmd->add_option("--checkpoint", pr.checkpoint)->required();
  pr_cmd->add_option("--data", pr.data, "dataset directory");
  pr_cmd->add_option("--split", pr.split, "train, val or all")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen_cmd) return gen_data(gen);
    if (*an_cmd) return analyze_cmd(an);
    if (*gc_cmd) return gradcheck_cmd(gc);
    if (*tr_cmd) return train_cmd(tr);
    if (*ev_cmd) return eval_cmd(ev);
    if (*pr_cmd) return predict_cmd(pr);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
