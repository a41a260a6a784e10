// metastruct: experiment runner.
//
//   metastruct synth   --config exp.json [--out DIR] [--seed N] [--threads N]
//   metastruct corrupt --config exp.json ...
//   metastruct train   --config exp.json ...
//   metastruct igtt    --config exp.json ...
//   metastruct analyze --config exp.json ...
//   metastruct report  RUN_DIR... [--out DIR]
//
// Exit status: 0 ok, 2 invalid configuration or arguments, 3 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "metastruct/error.hpp"
#include "metastruct/harness.hpp"

namespace ms = metastruct;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment JSON")->required();
  sub->add_option("--out", c.out, "output root (overrides output_dir)");
  sub->add_option("--seed", c.seed, "root seed (overrides config)");
  sub->add_option("--threads", c.threads, "worker threads")->check(CLI::Range(1, 256));
}

ms::ExperimentConfig resolve(const Common& c) {
  ms::ExperimentConfig cfg = ms::load_config(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void print_metrics(const ms::RunManifest& m) {
  for (const auto& [k, v] : m.metrics) std::printf("%s = %.6g\n", k.c_str(), v);
  std::printf("wall_clock_seconds = %.3f\n", m.wall_clock_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noisy-label meta-structure experiments"};
  app.require_subcommand(1);

  Common common;
  using Command = ms::RunManifest (*)(const ms::ExperimentConfig&, const ms::CommandOptions&);
  const std::pair<const char*, Command> commands[] = {
      {"synth", &ms::cmd_synth},     {"corrupt", &ms::cmd_corrupt}, {"train", &ms::cmd_train},
      {"igtt", &ms::cmd_igtt},       {"analyze", &ms::cmd_analyze},
  };
  const char* help[] = {"generate the synthetic train/test dataset",
                        "write a noisy label set for the training split",
                        "train the segmentation network on a label set",
                        "unsupervised training by iterative threshold selection",
                        "density and class-count analysis of label noise"};
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    subs.push_back(app.add_subcommand(commands[i].first, help[i]));
    add_common(subs.back(), common);
  }

  std::vector<std::string> run_dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "summarise completed runs");
  report->add_option("runs", run_dirs, "run directories")->required();
  report->add_option("--out", report_out, "where to write summary.md and summary.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (report->parsed()) {
      std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
      const ms::ReportResult r = ms::cmd_report(dirs, report_out);
      std::cout << r.markdown;
      return kExitOk;
    }
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      const ms::ExperimentConfig cfg = resolve(common);
      const ms::CommandOptions opts{common.threads};
      print_metrics(commands[i].second(cfg, opts));
      return kExitOk;
    }
  } catch (const ms::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ms::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ms::TrainingDiverged& e) {
    std::cerr << "training diverged at epoch " << e.epoch() << ": " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
