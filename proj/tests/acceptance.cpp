// End-to-end acceptance battery. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metastruct/datagen.hpp"
#include "metastruct/harness.hpp"
#include "metastruct/igtt.hpp"
#include "metastruct/label_synthesis.hpp"
#include "metastruct/losses.hpp"
#include "metastruct/metastructure.hpp"
#include "metastruct/metrics.hpp"
#include "metastruct/rng.hpp"
#include "metastruct/segnet.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace metastruct;

namespace {

const std::vector<std::uint64_t> kSeeds{1, 2, 3};
fs::path g_work;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? NAN : s / static_cast<double>(v.size());
}

ExperimentConfig base_config(const std::string& generator, std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.dataset.generator = generator;
  c.dataset.count = 50;
  c.output_dir = (g_work / (generator + "_s" + std::to_string(seed))).string();
  return c;
}

NoiseSpec noise(NoiseType t, double p = 0.0) {
  NoiseSpec n;
  n.type = t;
  n.p = p;
  return n;
}

struct TrainRun {
  std::vector<double> loss;
  std::vector<double> dice;
  double final_dice = 0.0;
  double max_dice = 0.0;
  double pixel_error_rate = 0.0;
};

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// Runs synth/corrupt/train through the harness, caching by directory.
std::map<std::string, TrainRun> g_runs;
std::set<std::string> g_synthed;

TrainRun train_run(const std::string& generator, std::uint64_t seed, const NoiseSpec& n) {
  ExperimentConfig cfg = base_config(generator, seed);
  cfg.noise = n;
  cfg.name = noise_tag(n);
  const std::string key = cfg.output_dir + "/" + cfg.name;
  if (auto it = g_runs.find(key); it != g_runs.end()) return it->second;
  if (g_synthed.insert(cfg.output_dir).second) cmd_synth(cfg);
  const RunManifest corrupt = cmd_corrupt(cfg);
  const RunManifest m = cmd_train(cfg);
  TrainRun r;
  for (const auto& row : read_csv(run_dir(cfg) / "history.csv")) {
    r.loss.push_back(std::stod(row.at(1)));
    r.dice.push_back(std::stod(row.at(2)));
  }
  r.final_dice = m.metrics.at("final_test_dice");
  r.max_dice = m.metrics.at("max_test_dice");
  r.pixel_error_rate = corrupt.metrics.at("pixel_error_rate");
  g_runs[key] = r;
  return r;
}

Outcome criterion_ranking() {
  const double cl = train_run("curvilinear", 1, noise(NoiseType::kCL)).final_dice;
  const double rcl = train_run("curvilinear", 1, noise(NoiseType::kRclFlip, 0.45)).final_dice;
  const double pcl = train_run("curvilinear", 1, noise(NoiseType::kPclSkeleton)).final_dice;
  const double rl = train_run("curvilinear", 1, noise(NoiseType::kRL, 0.5)).final_dice;
  const RankingVerdict v = ranking_verdict(cl, rcl, pcl, rl);

  // The report path must reach the same verdict from the run directories.
  std::vector<fs::path> dirs;
  for (const char* name : {"CL", "RCL-flip_p0.45", "PCL-skeleton", "RL_p0.5"}) {
    dirs.push_back(g_work / "curvilinear_s1" / "runs" / name);
  }
  bool report_agrees = false;
  try {
    const ReportResult rep = cmd_report(dirs, g_work / "report");
    report_agrees = rep.ranking_pass && *rep.ranking_pass == v.pass;
  } catch (const std::exception& e) {
    std::printf("  report failed: %s\n", e.what());
  }
  return {v.pass && report_agrees,
          fmt("CL %.3f RCL %.3f PCL %.3f RL %.3f (%s, report %s)", cl, rcl, pcl, rl,
              v.line.c_str(), report_agrees ? "agrees" : "disagrees")};
}

Outcome criterion_rcl_sweep() {
  const std::vector<double> ps{0.0, 0.2, 0.45};
  std::vector<double> means;
  std::string detail;
  for (double p : ps) {
    std::vector<double> d;
    for (auto s : kSeeds) {
      d.push_back(train_run("curvilinear", s,
                            p == 0.0 ? noise(NoiseType::kCL) : noise(NoiseType::kRclFlip, p))
                      .final_dice);
    }
    means.push_back(mean(d));
    detail += fmt("p=%.2f %.3f  ", p, means.back());
  }
  constexpr double kSlack = 0.02;
  bool monotone = true;
  for (std::size_t i = 1; i < means.size(); ++i) monotone &= means[i] <= means[i - 1] + kSlack;
  const double drop = means.front() - means.back();
  detail += fmt("total drop %.3f", drop);
  return {monotone && drop <= 0.07, detail};
}

Outcome criterion_pcl_order() {
  std::vector<double> cl, dil, ero, skel;
  for (auto s : kSeeds) {
    cl.push_back(train_run("blobs", s, noise(NoiseType::kCL)).final_dice);
    dil.push_back(train_run("blobs", s, noise(NoiseType::kPclDilate)).final_dice);
    ero.push_back(train_run("blobs", s, noise(NoiseType::kPclErode)).final_dice);
    skel.push_back(train_run("blobs", s, noise(NoiseType::kPclSkeleton)).final_dice);
  }
  const double c = mean(cl), d = mean(dil), e = mean(ero), k = mean(skel);
  const bool pass = c - d >= 0.02 && c - e >= 0.02 && d - k >= 0.02 && e - k >= 0.02;
  return {pass, fmt("CL %.3f dilate %.3f erode %.3f skeleton %.3f", c, d, e, k)};
}

int plateau_epoch(const std::vector<double>& loss, double target, double tol) {
  // First epoch after which the loss stays within tol of the target.
  int epoch = -1;
  for (std::size_t e = loss.size(); e-- > 0;) {
    if (std::abs(loss[e] - target) > tol) break;
    epoch = static_cast<int>(e) + 1;
  }
  return epoch;
}

Outcome criterion_plateau() {
  const std::vector<double> qs{0.1, 0.3, 0.5};
  bool pass = true;
  int prev = 1 << 30;
  std::string detail;
  for (double q : qs) {
    const TrainRun r = train_run("curvilinear", 1, noise(NoiseType::kRL, q));
    const double h = oracle::binary_entropy(q);
    const int ep = plateau_epoch(r.loss, h, 0.02);
    detail += fmt("q=%.1f loss %.4f H %.4f epoch %d  ", q, r.loss.back(), h, ep);
    pass &= ep > 0 && ep <= prev;
    if (ep > 0) prev = ep;
  }
  return {pass, detail};
}

Outcome criterion_two_stage() {
  const TrainRun r = train_run("curvilinear", 1, noise(NoiseType::kRL, 0.1));
  const double rise = r.max_dice - r.final_dice;
  return {rise >= 0.10, fmt("max %.3f final %.3f gap %.3f", r.max_dice, r.final_dice, rise)};
}

Outcome criterion_meta_vs_pixel() {
  const double q = 0.1;
  const TrainRun rl = train_run("curvilinear", 1, noise(NoiseType::kRL, q));
  const TrainRun rcl = train_run("curvilinear", 1, noise(NoiseType::kRclFlip, 0.49));

  // Closed form: RL(q) mislabels a pixel with probability q(1-f) + (1-q)f.
  const LoadedDataset ds = load_dataset(dataset_dir(base_config("curvilinear", 1)));
  double fg = 0.0, n = 0.0;
  for (const auto& m : ds.train.labels) {
    fg += static_cast<double>(m.count(1));
    n += static_cast<double>(m.size());
  }
  const double f = fg / n;
  const double rl_expected = q * (1.0 - f) + (1.0 - q) * f;
  const bool closed_form = oracle::within_binomial(rl.pixel_error_rate * n, n, rl_expected) &&
                           oracle::within_binomial(rcl.pixel_error_rate * n, n, 0.49);
  const bool ordered = rl.pixel_error_rate < rcl.pixel_error_rate;
  const bool gap = rcl.final_dice > rl.final_dice + 0.10;
  return {closed_form && ordered && gap,
          fmt("error rate RL %.3f (closed form %.3f) < RCL %.3f; Dice RCL %.3f RL %.3f",
              rl.pixel_error_rate, rl_expected, rcl.pixel_error_rate, rcl.final_dice,
              rl.final_dice)};
}

Outcome criterion_phantom() {
  const AnalysisSpec a;
  const PhantomResult r = phantom_experiment(256, NoiseTransitionMatrix(a.q_rcl),
                                             NoiseTransitionMatrix(a.q_rl), 8);
  const double gap = r.rcl.density_correlation_to_cl - r.rl.density_correlation_to_cl;
  const bool pass = r.rcl.class_count_estimate == r.rcl.ntm_rank &&
                    r.rl.class_count_estimate == r.rl.ntm_rank && gap >= 0.5;
  return {pass, fmt("full rank: count %d rank %d; rank one: count %d rank %d; corr gap %.3f",
                    r.rcl.class_count_estimate, r.rcl.ntm_rank, r.rl.class_count_estimate,
                    r.rl.ntm_rank, gap)};
}

NoiseTransitionMatrix random_ntm(int m, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<std::vector<double>> rows(m, std::vector<double>(m));
  for (auto& row : rows) {
    double s = 0.0;
    for (auto& v : row) s += (v = g(rng));
    for (auto& v : row) v /= s;
    // Restore the exact unit sum in the last entry.
    double head = 0.0;
    for (int j = 0; j + 1 < m; ++j) head += row[j];
    row.back() = 1.0 - head;
  }
  return NoiseTransitionMatrix(rows);
}

Outcome criterion_expectation() {
  std::mt19937_64 rng(8);
  bool pass = true;
  double worst = 0.0;
  int cases = 0;
  const LabelMask two = gen_circle_rectangle(128);
  const LabelMask three = gen_multiclass(128, 128, 3, 8).mask;
  for (const LabelMask* cl : {&two, &three}) {
    for (int t = 0; t < 5; ++t) {
      const NoiseTransitionMatrix q = random_ntm(cl->n_classes(), rng);
      const LabelMask noisy = apply_ntm(*cl, q, derive_seed(8, "ntm", cases));
      for (int m = 0; m < cl->n_classes(); ++m) {
        const ExpectationAgreement e = expectation_agreement(noisy, q, *cl, m, 4);
        const double ratio = e.mean_abs_deviation / e.standard_error;
        worst = std::max(worst, ratio);
        pass &= e.interior_pixels > 0 && ratio <= 3.0;
      }
      ++cases;
    }
  }
  return {pass, fmt("%d matrices, worst MAD/SE %.3f", cases, worst)};
}

Outcome criterion_igtt() {
  std::vector<double> with_ems, without_ems, otsu_d;
  for (auto s : kSeeds) {
    ExperimentConfig cfg = base_config("blobs", s);
    if (g_synthed.insert(cfg.output_dir).second) cmd_synth(cfg);
    const LoadedDataset ds = load_dataset(dataset_dir(cfg));
    LabelledSet all = ds.train;
    all.images.insert(all.images.end(), ds.test.images.begin(), ds.test.images.end());
    all.labels.insert(all.labels.end(), ds.test.labels.begin(), ds.test.labels.end());

    for (bool use_ems : {true, false}) {
      IgttConfig ic;
      ic.use_ems = use_ems;
      ic.train.seed = derive_seed(s, "igtt");
      const IgttState st = igtt_train(all.images, ic);
      (use_ems ? with_ems : without_ems).push_back(igtt_evaluate(st.params, all, ic));
    }
    double o = 0.0;
    for (std::size_t i = 0; i < all.images.size(); ++i) {
      o += dice(otsu(all.images[i]).mask, all.labels[i]);
    }
    otsu_d.push_back(o / static_cast<double>(all.images.size()));
    std::printf("  seed %llu: with EMS %.3f, without %.3f, Otsu %.3f\n",
                static_cast<unsigned long long>(s), with_ems.back(), without_ems.back(),
                otsu_d.back());
  }
  const double w = mean(with_ems), wo = mean(without_ems), o = mean(otsu_d);
  return {w - wo >= 0.02 && w - o >= 0.02,
          fmt("with EMS %.3f, without EMS %.3f, Otsu %.3f", w, wo, o)};
}

Outcome criterion_numerical() {
  std::string detail;
  bool pass = true;
  const std::pair<GradientCheckLoss, const char*> losses[] = {
      {GradientCheckLoss::kBce, "BCE"}, {GradientCheckLoss::kDmi, "DMI"},
      {GradientCheckLoss::kIou, "IOU"}};
  for (const auto& [loss, name] : losses) {
    const double err = gradient_check(loss, 10);
    pass &= err < 1e-4;
    detail += fmt("%s %.2e  ", name, err);
  }

  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double flip_gap = 0.0, max_det = 0.0;
  bool metric_oracles = true;
  for (int t = 0; t < 200; ++t) {
    const int h = 4 + t % 13, w = 3 + t % 7;
    ProbabilityMap p(h, w);
    LabelMask s(h, w, 2), c(h, w, 2);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = u(rng);
      s[i] = u(rng) < 0.3 ? 1 : 0;
      c[i] = 1 - s[i];
    }
    flip_gap = std::max(flip_gap, std::abs(dmi_loss(p, s).value - dmi_loss(p, c).value));
    max_det = std::max(max_det, std::abs(joint_matrix(p, to_soft(s)).det()));
    metric_oracles &= auc(p, s) == oracle::brute_auc(p, s);
    metric_oracles &= otsu(p).threshold_bin == oracle::exhaustive_otsu_bin(p);
  }
  // Perfectly separable score maps give the determinant bound.
  ProbabilityMap half(2, 2);
  LabelMask half_mask(2, 2, 2);
  half[0] = half[1] = 1.0;
  half_mask[0] = half_mask[1] = 1;
  max_det = std::max(max_det, std::abs(joint_matrix(half, to_soft(half_mask)).det()));

  LabelMask a(2, 4, 2), b(2, 4, 2);
  a[0] = a[1] = a[2] = 1;
  b[1] = b[2] = b[3] = 1;
  const LabelMask empty(2, 4, 2);
  metric_oracles &= dice(a, b) == 2.0 * 2.0 / 6.0;
  metric_oracles &= dice(a, a) == 1.0;
  metric_oracles &= dice(a, empty) == 0.0;
  metric_oracles &= dice(empty, empty) == 1.0;

  pass &= flip_gap <= 1e-12 && max_det <= 0.25 + 1e-12 && metric_oracles;
  detail += fmt("flip gap %.1e, max |det| %.6f, metric oracles %s", flip_gap, max_det,
                metric_oracles ? "exact" : "MISMATCH");
  return {pass, detail};
}

std::map<std::string, std::string> csv_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), {});
  }
  return out;
}

Outcome criterion_reproducible() {
  auto run_all = [](const fs::path& out) {
    ExperimentConfig cfg;
    cfg.seed = 11;
    cfg.dataset.generator = "mixed";
    cfg.dataset.count = 8;
    cfg.noise = noise(NoiseType::kRclFlip, 0.3);
    cfg.train.epochs = 2;
    cfg.igtt.config.max_iters = 2;
    cfg.analysis.side = 64;
    cfg.analysis.bandwidth = 2;
    cfg.output_dir = out.string();
    cmd_synth(cfg);
    cmd_corrupt(cfg);
    cfg.name = "train";
    cmd_train(cfg);
    cfg.name = "igtt";
    cmd_igtt(cfg);
    cfg.name = "phantom";
    cmd_analyze(cfg);
    cfg.name = "labels";
    cfg.analysis.recipe = "labels";
    cmd_analyze(cfg);
    cmd_report({out / "runs" / "train", out / "runs" / "igtt"}, out / "report");
  };
  run_all(g_work / "repro_a");
  run_all(g_work / "repro_b");
  const auto a = csv_bytes(g_work / "repro_a");
  const auto b = csv_bytes(g_work / "repro_b");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second != bytes) ++differing;
  }
  return {!a.empty() && a.size() == b.size() && differing == 0,
          fmt("%zu CSV files compared, %zu differ", a.size(), differing)};
}

}  // namespace

int main(int argc, char** argv) {
  g_work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_work";
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"label family ranking", criterion_ranking},
      {"flip-noise robustness sweep", criterion_rcl_sweep},
      {"partial-label degradation order", criterion_pcl_order},
      {"random-label memorization plateau", criterion_plateau},
      {"two-stage random-label dynamics", criterion_two_stage},
      {"meta-structure beats pixel accuracy", criterion_meta_vs_pixel},
      {"phantom class count and density correlation", criterion_phantom},
      {"density expectation agreement", criterion_expectation},
      {"iGTT ablation and baselines", criterion_igtt},
      {"numerical gates", criterion_numerical},
      {"reproducibility", criterion_reproducible},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& [name, run] = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %2zu %s: %s (%.0f s)\n", o.pass ? "PASS" : "FAIL", i + 1, name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
