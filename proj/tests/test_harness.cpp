#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "metastruct/error.hpp"
#include "metastruct/harness.hpp"
#include "metastruct/metastructure.hpp"

using namespace metastruct;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("metastruct_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

ExperimentConfig small_config(const fs::path& out, const std::string& name = "run") {
  ExperimentConfig c = parse_config(R"({"name":")" + name + R"(","seed":3,
    "dataset":{"generator":"blobs","count":6,"size":32},
    "train":{"epochs":2,"learning_rate":0.2},
    "igtt":{"max_iters":2,"eval_cl":true}})");
  c.output_dir = out.string();
  return c;
}

}  // namespace

TEST(Config, Defaults) {
  const auto c = parse_config(R"({"name":"x","seed":9})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.dataset.count, 50);
  EXPECT_EQ(c.dataset.height, 64);
  EXPECT_EQ(c.noise.type, NoiseType::kCL);
  EXPECT_EQ(c.train.epochs, 60);
}

TEST(Config, ErrorsCarryPaths) {
  EXPECT_EQ(config_error(R"({"name":"x"})"), "$.seed: root seed is required");
  EXPECT_EQ(config_error(R"({"name":"x","seed":1,"extra":2})"), "$.extra: unknown field");
  EXPECT_EQ(config_error(R"({"name":"x","seed":1,"dataset":{"count":"5"}})"),
            "$.dataset.count: expected an integer");
  EXPECT_EQ(config_error(R"({"name":"x","seed":1,"noise":{"type":"RCL-flip","p":1.0}})"),
            "$.noise.p: p_flip must lie in [0, 1)");
  EXPECT_EQ(config_error(R"({"name":"x","seed":1,"noise":{"type":"RL","p":0.7}})"),
            "$.noise.p: p_generate must lie in [0, 0.5]");
  EXPECT_EQ(config_error(R"({"name":"x","seed":-1})"), "$.seed: expected a non-negative integer");
  EXPECT_NE(config_error(R"({"name":"x","seed":1,"noise":{"type":"Bogus"}})").find("$.noise.type"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"name":"x","seed":1,"noise":{"type":"NTM","ntm":[[0.5,0.4],[0,1]]}})")
                .find("$.noise.ntm"),
            std::string::npos);
  EXPECT_NE(config_error("{not json").find("$: invalid JSON"), std::string::npos);
  EXPECT_NE(config_error(R"({"name":"x","seed":1,"dataset":{"size":16}})").find("$.dataset.size"),
            std::string::npos);
}

TEST(Config, JsonRoundTripPreservesHash) {
  auto c = parse_config(R"({"name":"x","seed":5,"noise":{"type":"PCL-dilate","iterations":2},
                            "train":{"loss":"DMI+IOU"}})");
  c.output_dir = "somewhere";
  const auto back = parse_config(config_to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(back.noise.iterations, 2);
  EXPECT_EQ(back.train.loss, LossKind::kDmiIou);
  auto other = c;
  other.seed = 6;
  EXPECT_NE(config_hash(other), config_hash(c));
  other = c;
  other.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(other), config_hash(c));
}

TEST(Noise, TagsAndMatrices) {
  NoiseSpec n;
  n.type = NoiseType::kRclFlip;
  n.p = 0.45;
  EXPECT_EQ(noise_tag(n), "RCL-flip_p0.45");
  EXPECT_EQ(ntm_rank(*implied_ntm(n, 2)), 2);
  n.type = NoiseType::kRL;
  n.p = 0.5;
  EXPECT_EQ(ntm_rank(*implied_ntm(n, 2)), 1);
  n.type = NoiseType::kPclSkeleton;
  EXPECT_FALSE(implied_ntm(n, 2).has_value());
  EXPECT_EQ(noise_tag(n), "PCL-skeleton");
  EXPECT_THROW(parse_noise_type("nope"), InvalidArgument);
  for (auto t : {NoiseType::kCL, NoiseType::kRclSample, NoiseType::kPclErode, NoiseType::kNtm}) {
    EXPECT_EQ(parse_noise_type(noise_type_name(t)), t);
  }
}

TEST(Manifest, RoundTrip) {
  RunManifest m;
  m.experiment = "e";
  m.command = "train";
  m.config_hash = "00ff";
  m.input_hash = "abcd";
  m.artifacts = {{"checkpoint", "model.ckpt"}};
  m.wall_clock_seconds = 1.5;
  m.metrics = {{"dice", 0.75}, {"auc", std::nan("")}};
  m.info = {{"noise_tag", "CL"}};
  const RunManifest back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(back.experiment, m.experiment);
  EXPECT_EQ(back.artifacts, m.artifacts);
  EXPECT_EQ(back.metrics.at("dice"), 0.75);
  EXPECT_TRUE(std::isnan(back.metrics.at("auc")));
  EXPECT_EQ(back.info, m.info);
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
}

TEST(Synth, SplitAndDeterminism) {
  const fs::path out = fresh_dir("synth");
  auto cfg = parse_config(R"({"name":"d","seed":11,"dataset":{"generator":"mixed","count":50}})");
  cfg.output_dir = (out / "a").string();
  const auto m = cmd_synth(cfg);
  EXPECT_EQ(m.metrics.at("train_count"), 40);
  EXPECT_EQ(m.metrics.at("test_count"), 10);
  EXPECT_EQ(m.metrics.at("count_curvilinear"), 25);
  EXPECT_EQ(m.metrics.at("count_blobs"), 25);
  const fs::path ds = dataset_dir(cfg);
  for (const auto& [key, rel] : m.artifacts) EXPECT_TRUE(fs::exists(ds / rel)) << key;
  const auto loaded = load_dataset(ds);
  EXPECT_EQ(loaded.train.images.size(), 40u);
  EXPECT_EQ(loaded.test.labels.size(), 10u);
  EXPECT_NE(slurp(ds / "manifest.json").find("\"generator\": \"blobs\""), std::string::npos);

  cfg.output_dir = (out / "b").string();
  cmd_synth(cfg);
  for (const auto& [key, rel] : m.artifacts) {
    ASSERT_EQ(slurp(ds / rel), slurp(dataset_dir(cfg) / rel)) << key;
  }
  EXPECT_EQ(slurp(ds / "manifest.json"), slurp(dataset_dir(cfg) / "manifest.json"));
}

TEST(Synth, UnwritableOutput) {
  const fs::path out = fresh_dir("unwritable");
  std::ofstream(out / "file") << "x";
  auto cfg = parse_config(R"({"name":"d","seed":1,"dataset":{"count":4,"size":32}})");
  cfg.output_dir = (out / "file").string();
  EXPECT_THROW(cmd_synth(cfg), IoError);
}

TEST(Corrupt, RecordsErrorRate) {
  const fs::path out = fresh_dir("corrupt");
  auto cfg = small_config(out);
  EXPECT_THROW(cmd_corrupt(cfg), IoError);  // no dataset yet
  cmd_synth(cfg);
  cfg.noise.type = NoiseType::kRclFlip;
  cfg.noise.p = 0.45;
  const auto m = cmd_corrupt(cfg);
  EXPECT_NEAR(m.metrics.at("pixel_error_rate"), 0.45, 0.03);
  EXPECT_TRUE(fs::exists(labels_dir(cfg) / "manifest.json"));
  cfg.noise.type = NoiseType::kPclSkeleton;
  const auto sk = cmd_corrupt(cfg);
  EXPECT_GT(sk.metrics.at("pixel_error_rate"), 0.0);
  EXPECT_NE(labels_dir(cfg), out / "labels" / "RCL-flip_p0.45");
}

TEST(TrainAndIgtt, ReproducibleOutputs) {
  const fs::path out = fresh_dir("train");
  auto cfg = small_config(out);
  cmd_synth(cfg);
  cmd_corrupt(cfg);
  EXPECT_THROW(
      [&] {
        auto c = cfg;
        c.noise.type = NoiseType::kRL;
        c.noise.p = 0.5;
        cmd_train(c);
      }(),
      IoError);
  const auto m1 = cmd_train(cfg);
  const std::string h1 = slurp(run_dir(cfg) / "history.csv");
  const std::string e1 = slurp(run_dir(cfg) / "metrics.csv");
  const std::string k1 = slurp(run_dir(cfg) / "model.ckpt");
  EXPECT_EQ(h1.substr(0, 29), "epoch,train_loss,test_dice\r\n1");
  const auto m2 = cmd_train(cfg, {.threads = 2});
  EXPECT_EQ(slurp(run_dir(cfg) / "history.csv"), h1);
  EXPECT_EQ(slurp(run_dir(cfg) / "metrics.csv"), e1);
  EXPECT_EQ(slurp(run_dir(cfg) / "model.ckpt"), k1);
  EXPECT_EQ(m1.metrics, m2.metrics);
  EXPECT_EQ(m1.input_hash, m2.input_hash);

  cfg.name = "ig";
  cmd_igtt(cfg);
  const std::string log = slurp(run_dir(cfg) / "igtt_log.csv");
  EXPECT_EQ(log.substr(0, log.find('\r')), "iter,chosen_threshold_index,dmi_loss,iou_loss,eval_dice");
  const std::string metrics = slurp(run_dir(cfg) / "metrics.csv");
  cmd_igtt(cfg);
  EXPECT_EQ(slurp(run_dir(cfg) / "igtt_log.csv"), log);
  EXPECT_EQ(slurp(run_dir(cfg) / "metrics.csv"), metrics);
  EXPECT_NE(metrics.find(",otsu,"), std::string::npos);
}

TEST(Analyze, PhantomRecipe) {
  const fs::path out = fresh_dir("analyze");
  auto cfg = parse_config(R"({"name":"ph","seed":1,"analysis":{"recipe":"phantom","side":128}})");
  cfg.output_dir = out.string();
  const auto m = cmd_analyze(cfg);
  for (const char* f : {"cl_density.pgm", "rcl_density.pgm", "rl_density.pgm", "report.txt",
                        "correlations.csv"}) {
    EXPECT_TRUE(fs::exists(run_dir(cfg) / f)) << f;
  }
  const std::string csv = slurp(run_dir(cfg) / "correlations.csv");
  EXPECT_NE(csv.find("CL,2,2,1\r\n"), std::string::npos);
  EXPECT_NE(csv.find("RCL,2,"), std::string::npos);
  EXPECT_NE(csv.find("RL,1,"), std::string::npos);
  EXPECT_EQ(m.metrics.at("rcl_rank"), 2);
  EXPECT_EQ(m.metrics.at("rl_rank"), 1);
}

TEST(Analyze, LabelsRecipeIdentity) {
  const fs::path out = fresh_dir("analyze_labels");
  auto cfg = parse_config(R"({"name":"lab","seed":1,"dataset":{"generator":"blobs","count":4},
                              "analysis":{"recipe":"labels","side":64,"bandwidth":2}})");
  cfg.output_dir = out.string();
  cmd_synth(cfg);
  cmd_corrupt(cfg);
  const auto m = cmd_analyze(cfg);
  EXPECT_NEAR(m.metrics.at("mean_density_correlation"), 1.0, 1e-12);
  EXPECT_EQ(m.metrics.at("ntm_rank"), 2);
}

TEST(Report, VerdictAndGaps) {
  const fs::path out = fresh_dir("report");
  EXPECT_THROW(cmd_report({}, out), ConfigError);
  auto make = [&](const std::string& name, const std::string& type, double dice) {
    RunManifest m;
    m.experiment = name;
    m.command = "train";
    m.metrics = {{"final_test_dice", dice}, {"max_test_dice", dice}};
    m.info = {{"noise_type", type}, {"noise_tag", type}};
    fs::create_directories(out / name);
    write_manifest(out / name / "manifest.json", m);
    return out / name;
  };
  const auto d_rl = make("d_rl", "RL", 0.30);
  const auto d_cl = make("a_cl", "CL", 0.92);
  const auto d_pcl = make("c_pcl", "PCL-skeleton", 0.50);
  const auto d_rcl = make("b_rcl", "RCL-flip", 0.88);
  const auto r = cmd_report({d_rl, d_cl, d_pcl, d_rcl}, out / "summary");
  ASSERT_TRUE(r.ranking_pass.has_value());
  EXPECT_TRUE(*r.ranking_pass);
  EXPECT_NE(r.markdown.find("CL ≈ RCL > PCL > RL: PASS"), std::string::npos);
  EXPECT_LT(r.markdown.find("a_cl"), r.markdown.find("b_rcl"));
  EXPECT_LT(r.markdown.find("c_pcl"), r.markdown.find("d_rl"));
  EXPECT_TRUE(fs::exists(out / "summary" / "summary.csv"));

  const auto r2 = cmd_report({d_cl, out / "missing"}, "");
  EXPECT_FALSE(r2.ranking_pass.has_value());
  EXPECT_FALSE(r2.gaps.empty());
  EXPECT_NE(r2.markdown.find("## Gaps"), std::string::npos);
  EXPECT_FALSE(ranking_verdict(0.92, 0.80, 0.5, 0.3).pass);
}

#ifdef METASTRUCT_CLI_PATH
namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(METASTRUCT_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
  const fs::path out = fresh_dir("cli");
  std::ofstream(out / "good.json") << R"({"name":"c","seed":1,
      "dataset":{"generator":"blobs","count":4,"size":32},"train":{"epochs":1}})";
  std::ofstream(out / "bad.json") << R"({"name":"c","seed":1,"whoops":true})";
  const std::string o = " --out " + (out / "o").string();
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("synth --config " + (out / "bad.json").string() + o), 2);
  EXPECT_EQ(run_cli("synth --config " + (out / "nofile.json").string() + o), 2);
  EXPECT_EQ(run_cli("train --config " + (out / "good.json").string() + o), 3);  // no dataset yet
  EXPECT_EQ(run_cli("synth --config " + (out / "good.json").string() + o + " --seed 4"), 0);
  EXPECT_EQ(run_cli("corrupt --config " + (out / "good.json").string() + o + " --seed 4"), 0);
  EXPECT_EQ(run_cli("train --config " + (out / "good.json").string() + o + " --seed 4"), 0);
  EXPECT_EQ(run_cli("report " + (out / "o" / "runs" / "c").string()), 0);
  EXPECT_EQ(run_cli("report"), 2);
  EXPECT_EQ(run_cli("synth --config " + (out / "good.json").string() + " --threads 0"), 2);
}
#endif
