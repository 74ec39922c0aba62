#include "steal_lab/cli.hpp"

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>

#include <pthread.h>

#include "CLI11.hpp"
#include "steal_lab/config.hpp"
#include "steal_lab/errors.hpp"
#include "steal_lab/log.hpp"
#include "steal_lab/oracle_http.hpp"
#include "steal_lab/plot.hpp"
#include "steal_lab/report.hpp"

namespace steal_lab {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string oracle;
  std::string bind = "127.0.0.1:8080";
  std::string checkpoint;
  std::vector<std::size_t> m;
  std::string size;
  std::string curves;
  std::string name;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig cfg = parse_config(o.config);
  if (!o.out.empty()) cfg.out = o.out;
  if (cfg.out.empty()) throw ConfigError("no output directory: pass --out or set 'out'");
  if (o.seed) cfg.plan.seeds = {*o.seed};
  if (o.jobs) cfg.plan.jobs = *o.jobs;
  if (!o.m.empty()) cfg.plan.forward_passes = o.m;
  if (!o.oracle.empty()) cfg.oracle = o.oracle;
  cfg.plan.validate();
  return cfg;
}

bool is_endpoint(const std::string& s) { return s.rfind("http://", 0) == 0; }

std::string oracle_name(const fs::path& checkpoint) { return checkpoint.stem().string(); }

// Opens a remote oracle for http:// endpoints, otherwise an in-process oracle
// around a target checkpoint.
std::unique_ptr<Oracle> open_oracle(const std::string& spec) {
  if (spec.empty() || spec == kInProcessOracle) {
    throw ConfigError("an oracle is needed: pass --oracle URL or --oracle TARGET_CHECKPOINT");
  }
  if (is_endpoint(spec)) return std::make_unique<RemoteOracle>(spec);
  const ParamSampler target = load_checkpoint(spec);
  if (target.kind() != SamplerKind::deterministic) {
    throw ConfigError("oracle checkpoint " + spec + " is not a deterministic target");
  }
  return std::make_unique<LocalOracle>(target.members().front(), oracle_name(spec));
}

struct Split {
  Dataset train, test;
  SplitPlan plan;
};

Split split_for(const ExperimentConfig& cfg) {
  const std::uint64_t seed = cfg.plan.seeds.front();
  auto [train, test] = make_datasets(cfg.plan.dataset, seed);
  // Matches the split used by run-all for the same seed.
  SplitPlan plan = split_halves(train, test, cell_seed(seed, "split"));
  return {std::move(train), std::move(test), std::move(plan)};
}

ProgressFn progress_logger() {
  return [](const std::string& line) { logger()->info("{}", line); };
}

int cmd_gen_data(const Options& o) {
  const ExperimentConfig cfg = load(o);
  auto [train, test] = make_datasets(cfg.plan.dataset, cfg.plan.seeds.front());
  fs::create_directories(cfg.out);
  save_csv(train, cfg.out / "train.csv");
  save_csv(test, cfg.out / "test.csv");
  std::cout << "wrote " << train.size() << " training and " << test.size() << " test rows to "
            << cfg.out.string() << "\n";
  return kExitOk;
}

int cmd_train_target(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const TargetSpec* spec = &cfg.plan.targets.front();
  if (!o.size.empty()) {
    const TargetSize want = target_size_from_string(o.size);
    spec = nullptr;
    for (const auto& t : cfg.plan.targets) {
      if (t.size == want) spec = &t;
    }
    if (!spec) throw ConfigError("config has no target of size '" + o.size + "'");
  }
  const std::string size = to_string(spec->size);
  const std::uint64_t seed = cfg.plan.seeds.front();
  const Split s = split_for(cfg);
  TrainedTarget t = train_target(*spec, s.train.subset(s.plan.target_train),
                                 s.test.subset(s.plan.target_test),
                                 cell_seed(seed, "target/" + size));
  fs::create_directories(cfg.out);
  const fs::path path = cfg.out / ("target_" + size + ".json");
  save_checkpoint(ParamSampler::single(SamplerKind::deterministic, std::move(t.network), 1), path);
  char line[128];
  std::snprintf(line, sizeof line, "target %s seed %llu test accuracy %.4f\n", size.c_str(),
                static_cast<unsigned long long>(seed), t.test_accuracy);
  write_text(cfg.out / ("target_" + size + ".txt"), line);
  std::cout << line << "checkpoint " << path.string() << "\n";
  return kExitOk;
}

int cmd_serve(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("serve needs --checkpoint");
  const ParamSampler target = load_checkpoint(o.checkpoint);
  if (target.kind() != SamplerKind::deterministic) {
    throw ConfigError("serve needs a deterministic target checkpoint");
  }
  const auto [host, port] = parse_endpoint(o.bind);
  const std::string name = o.name.empty() ? oracle_name(o.checkpoint) : o.name;

  // Block the stop signals before any server thread starts so only sigwait sees them.
  sigset_t stop;
  sigemptyset(&stop);
  sigaddset(&stop, SIGINT);
  sigaddset(&stop, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop, nullptr);

  OracleServer server(std::make_shared<LocalOracle>(target.members().front(), name));
  const int bound = server.bind(host, port);
  server.start_background();
  std::cout << "listening on http://" << host << ":" << bound << std::endl;
  logger()->info("serving '{}' ({} inputs, {} classes)", name, target.input_dim(),
                 target.num_classes());
  int sig = 0;
  sigwait(&stop, &sig);
  server.stop();
  logger()->info("stopped after {} queries", server.oracle().total_queries());
  return kExitOk;
}

int cmd_steal(const Options& o) {
  const ExperimentConfig cfg = load(o);
  auto oracle = open_oracle(cfg.oracle);
  const Split s = split_for(cfg);
  AttackInputs attack = prepare_attack(*oracle, s.train, s.test, s.plan);
  attack.dataset = cfg.plan.dataset.name();
  attack.target_size = oracle->metadata().name;
  attack.seed = cfg.plan.seeds.front();
  logger()->info("collected {} oracle labels for training", attack.queries);

  const ExperimentResult result = run_attack(attack, cfg.plan.surrogates,
                                             cfg.plan.forward_passes, cfg.plan.jobs, true,
                                             progress_logger());
  write_experiment(result, cfg.out);
  fs::create_directories(cfg.out / "surrogates");
  for (const auto& m : result.models) {
    save_checkpoint(m.sampler, cfg.out / "surrogates" / (m.family + "_" + m.trunk + ".json"));
  }
  const auto points = read_curves_csv(cfg.out / "curves.csv");
  plot_curves(points, cfg.out / "plots");
  std::cout << summarize(result);
  return result.errors.empty() ? kExitOk : kExitFailure;
}

int cmd_evaluate(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint SURROGATE");
  ExperimentConfig cfg = parse_config(o.config);
  if (o.seed) cfg.plan.seeds = {*o.seed};
  if (!o.oracle.empty()) cfg.oracle = o.oracle;
  auto oracle = open_oracle(cfg.oracle);
  ParamSampler sampler = load_checkpoint(o.checkpoint);
  if (!o.m.empty()) sampler = sampler.with_forward_passes(o.m.front());
  const Split s = split_for(cfg);
  const Matrix inputs = s.test.features.select_rows(s.plan.fidelity_test);
  Rng rng(cell_seed(cfg.plan.seeds.front(), "evaluate"));
  const double fidelity = evaluate_fidelity(sampler, *oracle, inputs, rng);
  char line[96];
  std::snprintf(line, sizeof line, "fidelity %.4f\n", fidelity);
  std::cout << line;
  if (!o.out.empty()) write_text(fs::path(o.out) / "evaluation.txt", line);
  return kExitOk;
}

int cmd_run_all(const Options& o) {
  const ExperimentConfig cfg = load(o);
  if (cfg.oracle != kInProcessOracle) {
    throw ConfigError("run-all trains its own targets; use steal for a remote oracle");
  }
  const ExperimentResult result = run_experiment(cfg.plan, progress_logger());
  write_experiment(result, cfg.out);
  plot_curves(read_curves_csv(cfg.out / "curves.csv"), cfg.out / "plots");
  std::cout << summarize(result);
  return result.errors.empty() ? kExitOk : kExitFailure;
}

int cmd_plot(const Options& o) {
  if (o.out.empty()) throw ConfigError("plot needs --out");
  const fs::path curves = o.curves.empty() ? fs::path(o.out) / "curves.csv" : fs::path(o.curves);
  for (const auto& p : plot_curves(read_curves_csv(curves), o.out)) {
    std::cout << p.string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Model-extraction laboratory: train targets, steal them through a hard-label "
               "oracle, and measure fidelity and prediction variance.",
               "steal-lab"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--config", o.config, "YAML experiment config")->check(
        CLI::ExistingFile);
    if (required) opt->required();
  };
  auto add_out = [&](CLI::App* c) { c->add_option("--out", o.out, "Output directory"); };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Run seed"); };
  auto add_jobs = [&](CLI::App* c) {
    c->add_option("--jobs", o.jobs, "Parallel grid cells")->check(CLI::PositiveNumber);
  };
  auto add_m = [&](CLI::App* c) {
    c->add_option("--m", o.m, "Forward passes M (repeatable)")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen-data", "Write train.csv and test.csv for the dataset");
  add_config(gen, true);
  add_out(gen);
  add_seed(gen);

  auto* train = app.add_subcommand("train-target", "Train one target and save its checkpoint");
  add_config(train, true);
  add_out(train);
  add_seed(train);
  train->add_option("--size", o.size, "Target size: small, medium or large");

  auto* serve = app.add_subcommand("serve", "Serve a target checkpoint as a hard-label oracle");
  serve->add_option("--checkpoint", o.checkpoint, "Target checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  serve->add_option("--bind", o.bind, "HOST:PORT to listen on (port 0 picks a free port)");
  serve->add_option("--name", o.name, "Oracle name (default: checkpoint file stem)");

  auto* steal = app.add_subcommand("steal", "Steal an oracle with every configured surrogate");
  add_config(steal, true);
  add_out(steal);
  add_seed(steal);
  add_jobs(steal);
  add_m(steal);
  steal->add_option("--oracle", o.oracle, "http://HOST:PORT endpoint or target checkpoint");

  auto* evaluate = app.add_subcommand("evaluate", "Fidelity of a surrogate checkpoint");
  add_config(evaluate, true);
  add_out(evaluate);
  add_seed(evaluate);
  add_m(evaluate);
  evaluate->add_option("--checkpoint", o.checkpoint, "Surrogate checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--oracle", o.oracle, "http://HOST:PORT endpoint or target checkpoint");

  auto* run_all = app.add_subcommand("run-all", "Run the full experiment grid");
  add_config(run_all, true);
  add_out(run_all);
  add_seed(run_all);
  add_jobs(run_all);
  add_m(run_all);

  auto* plot = app.add_subcommand("plot", "Render variance curves as SVG");
  plot->add_option("--curves", o.curves, "Curves CSV (default: OUT/curves.csv)");
  add_out(plot);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*train) return cmd_train_target(o);
    if (*serve) return cmd_serve(o);
    if (*steal) return cmd_steal(o);
    if (*evaluate) return cmd_evaluate(o);
    if (*run_all) return cmd_run_all(o);
    if (*plot) return cmd_plot(o);
  } catch (const std::exception& e) {
    logger()->error("{}", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace steal_lab
