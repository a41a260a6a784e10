#include "metastruct/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "metastruct/checkpoint.hpp"
#include "metastruct/datagen.hpp"
#include "metastruct/metastructure.hpp"
#include "metastruct/metrics.hpp"
#include "metastruct/pgm.hpp"
#include "metastruct/rng.hpp"

namespace metastruct {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Schema helpers. Every accessor reports the JSON path of the bad field.

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) fail(path, "expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) fail(path + "." + k, "unknown field");
  }
}

template <typename T>
T field(const json& obj, const std::string& path, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  const std::string p = path + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) fail(p, "expected a boolean");
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) fail(p, "expected a string");
    return v.get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) fail(p, "expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_unsigned()) return v.get<T>();
      const auto s = v.get<std::int64_t>();
      if (s < 0) fail(p, "expected a non-negative integer");
      return static_cast<T>(s);
    } else {
      return v.get<T>();
    }
  } else {
    if (!v.is_number()) fail(p, "expected a number");
    return v.get<T>();
  }
}

std::vector<std::vector<double>> matrix_field(const json& obj, const std::string& path,
                                              const char* key,
                                              std::vector<std::vector<double>> fallback) {
  if (!obj.contains(key)) return fallback;
  const std::string p = path + "." + key;
  const json& v = obj.at(key);
  if (!v.is_array()) fail(p, "expected an array of rows");
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string rp = p + "[" + std::to_string(i) + "]";
    if (!v[i].is_array()) fail(rp, "expected an array of numbers");
    std::vector<double> row;
    for (std::size_t j = 0; j < v[i].size(); ++j) {
      if (!v[i][j].is_number()) fail(rp + "[" + std::to_string(j) + "]", "expected a number");
      row.push_back(v[i][j].get<double>());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return rows;
  try {
    NoiseTransitionMatrix check(rows);
  } catch (const InvalidArgument& e) {
    fail(p, e.what());
  }
  return rows;
}

void require(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) fail(path, msg);
}

std::string loss_name(LossKind k) { return k == LossKind::kBce ? "BCE" : "DMI+IOU"; }

LossKind parse_loss(const std::string& s, const std::string& path) {
  if (s == "BCE") return LossKind::kBce;
  if (s == "DMI+IOU") return LossKind::kDmiIou;
  fail(path, "unknown loss '" + s + "' (expected BCE or DMI+IOU)");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  }
}

// Hash over (relative name, bytes) of the given files in order.
std::uint64_t hash_files(const std::vector<fs::path>& files, const fs::path& base) {
  std::uint64_t h = fnv1a64("");
  for (const auto& f : files) {
    h = fnv1a64(fs::relative(f, base).generic_string(), h);
    h = fnv1a64(read_file(f), h);
  }
  return h;
}

std::string format_double(double v, const char* fmt = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

int default_objects(const std::string& generator) { return generator == "blobs" ? 5 : 3; }

SyntheticSample generate(const DatasetSpec& d, const std::string& generator, std::uint64_t seed) {
  const int objects = d.n_objects > 0 ? d.n_objects : default_objects(generator);
  if (generator == "curvilinear") return gen_curvilinear(d.height, d.width, objects, seed);
  if (generator == "blobs") return gen_blobs(d.height, d.width, objects, seed);
  if (generator == "multiclass") return gen_multiclass(d.height, d.width, d.n_classes, seed);
  throw InvalidArgument("unknown generator '" + generator + "'");
}

std::string sample_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%03zu", i);
  return buf;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::string noise_type_name(NoiseType type) {
  switch (type) {
    case NoiseType::kCL: return "CL";
    case NoiseType::kRclSample: return "RCL-sample";
    case NoiseType::kRclFlip: return "RCL-flip";
    case NoiseType::kPclDilate: return "PCL-dilate";
    case NoiseType::kPclErode: return "PCL-erode";
    case NoiseType::kPclSkeleton: return "PCL-skeleton";
    case NoiseType::kRL: return "RL";
    case NoiseType::kNtm: return "NTM";
  }
  return "?";
}

NoiseType parse_noise_type(const std::string& name) {
  for (NoiseType t : {NoiseType::kCL, NoiseType::kRclSample, NoiseType::kRclFlip,
                      NoiseType::kPclDilate, NoiseType::kPclErode, NoiseType::kPclSkeleton,
                      NoiseType::kRL, NoiseType::kNtm}) {
    if (noise_type_name(t) == name) return t;
  }
  throw InvalidArgument("unknown noise type '" + name + "'");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("$: invalid JSON: ") + e.what());
  }
  reject_unknown(root, "$", {"name", "seed", "dataset", "noise", "train", "igtt", "analysis",
                             "output_dir", "dataset_dir"});
  ExperimentConfig cfg;
  cfg.name = field<std::string>(root, "$", "name", cfg.name);
  require(!cfg.name.empty() && cfg.name.find_first_of("/\\") == std::string::npos, "$.name",
          "must be a non-empty file-name-safe string");
  if (!root.contains("seed")) fail("$.seed", "root seed is required");
  cfg.seed = field<std::uint64_t>(root, "$", "seed", 0);
  cfg.output_dir = field<std::string>(root, "$", "output_dir", cfg.output_dir);
  cfg.dataset_dir = field<std::string>(root, "$", "dataset_dir", cfg.dataset_dir);

  if (root.contains("dataset")) {
    const json& d = root["dataset"];
    const std::string p = "$.dataset";
    reject_unknown(d, p, {"generator", "count", "size", "height", "width", "n_objects", "n_classes",
                          "train_fraction"});
    auto& ds = cfg.dataset;
    ds.generator = field<std::string>(d, p, "generator", ds.generator);
    require(ds.generator == "curvilinear" || ds.generator == "blobs" || ds.generator == "mixed" ||
                ds.generator == "multiclass",
            p + ".generator", "expected curvilinear, blobs, mixed or multiclass");
    ds.count = field<int>(d, p, "count", ds.count);
    require(ds.count >= 2, p + ".count", "must be >= 2");
    const int size = field<int>(d, p, "size", 0);
    ds.height = field<int>(d, p, "height", size > 0 ? size : ds.height);
    ds.width = field<int>(d, p, "width", size > 0 ? size : ds.width);
    require(ds.height >= 32 && ds.width >= 32, p + ".size", "images must be at least 32x32");
    ds.n_objects = field<int>(d, p, "n_objects", ds.n_objects);
    require(ds.n_objects >= 0, p + ".n_objects", "must be >= 0");
    ds.n_classes = field<int>(d, p, "n_classes", ds.n_classes);
    require(ds.n_classes >= 3 && ds.n_classes <= 8, p + ".n_classes", "must lie in [3, 8]");
    ds.train_fraction = field<double>(d, p, "train_fraction", ds.train_fraction);
    require(ds.train_fraction > 0.0 && ds.train_fraction < 1.0, p + ".train_fraction",
            "must lie in (0, 1)");
  }

  if (root.contains("noise")) {
    const json& n = root["noise"];
    const std::string p = "$.noise";
    reject_unknown(n, p, {"type", "p", "iterations", "ntm"});
    auto& ns = cfg.noise;
    const std::string type = field<std::string>(n, p, "type", "CL");
    try {
      ns.type = parse_noise_type(type);
    } catch (const InvalidArgument& e) {
      fail(p + ".type", e.what());
    }
    ns.p = field<double>(n, p, "p", ns.p);
    ns.iterations = field<int>(n, p, "iterations", ns.iterations);
    require(ns.iterations >= 1 && ns.iterations <= 16, p + ".iterations", "must lie in [1, 16]");
    ns.ntm = matrix_field(n, p, "ntm", {});
    switch (ns.type) {
      case NoiseType::kRclSample:
        require(ns.p > 0.0 && ns.p <= 1.0, p + ".p", "p_sample must lie in (0, 1]");
        break;
      case NoiseType::kRclFlip:
        require(ns.p >= 0.0 && ns.p < 1.0, p + ".p", "p_flip must lie in [0, 1)");
        break;
      case NoiseType::kRL:
        require(ns.p >= 0.0 && ns.p <= 0.5, p + ".p", "p_generate must lie in [0, 0.5]");
        break;
      case NoiseType::kNtm:
        require(!ns.ntm.empty(), p + ".ntm", "required for noise type NTM");
        break;
      default:
        break;
    }
  }

  if (root.contains("train")) {
    const json& t = root["train"];
    const std::string p = "$.train";
    reject_unknown(t, p, {"learning_rate", "momentum", "batch_size", "epochs", "loss", "grad_clip"});
    auto& tc = cfg.train;
    tc.learning_rate = field<double>(t, p, "learning_rate", tc.learning_rate);
    require(tc.learning_rate >= 0.0, p + ".learning_rate", "must be >= 0");
    tc.momentum = field<double>(t, p, "momentum", tc.momentum);
    require(tc.momentum >= 0.0 && tc.momentum < 1.0, p + ".momentum", "must lie in [0, 1)");
    tc.batch_size = field<int>(t, p, "batch_size", tc.batch_size);
    require(tc.batch_size >= 1, p + ".batch_size", "must be >= 1");
    tc.epochs = field<int>(t, p, "epochs", tc.epochs);
    require(tc.epochs >= 1, p + ".epochs", "must be >= 1");
    tc.grad_clip = field<double>(t, p, "grad_clip", tc.grad_clip);
    require(tc.grad_clip >= 0.0, p + ".grad_clip", "must be >= 0");
    tc.loss = parse_loss(field<std::string>(t, p, "loss", loss_name(tc.loss)), p + ".loss");
  }

  if (root.contains("igtt")) {
    const json& g = root["igtt"];
    const std::string p = "$.igtt";
    reject_unknown(g, p, {"threshold_count", "max_iters", "ems_radius", "ems_sample_prob", "use_ems",
                          "rl_init", "rl_init_prob", "bright_foreground", "eval_cl",
                          "snapshot_every", "learning_rate", "momentum", "batch_size", "grad_clip"});
    auto& ic = cfg.igtt.config;
    ic.threshold_count = field<int>(g, p, "threshold_count", ic.threshold_count);
    require(ic.threshold_count >= 2, p + ".threshold_count", "must be >= 2");
    ic.max_iters = field<int>(g, p, "max_iters", ic.max_iters);
    require(ic.max_iters >= 1, p + ".max_iters", "must be >= 1");
    ic.ems_radius = field<int>(g, p, "ems_radius", ic.ems_radius);
    require(ic.ems_radius >= 0, p + ".ems_radius", "must be >= 0");
    ic.ems_sample_prob = field<double>(g, p, "ems_sample_prob", ic.ems_sample_prob);
    require(ic.ems_sample_prob > 0.0 && ic.ems_sample_prob <= 1.0, p + ".ems_sample_prob",
            "must lie in (0, 1]");
    ic.use_ems = field<bool>(g, p, "use_ems", ic.use_ems);
    ic.rl_init = field<bool>(g, p, "rl_init", ic.rl_init);
    ic.rl_init_prob = field<double>(g, p, "rl_init_prob", ic.rl_init_prob);
    require(ic.rl_init_prob >= 0.0 && ic.rl_init_prob <= 0.5, p + ".rl_init_prob",
            "must lie in [0, 0.5]");
    ic.bright_foreground = field<bool>(g, p, "bright_foreground", ic.bright_foreground);
    ic.train.learning_rate = field<double>(g, p, "learning_rate", ic.train.learning_rate);
    require(ic.train.learning_rate >= 0.0, p + ".learning_rate", "must be >= 0");
    ic.train.momentum = field<double>(g, p, "momentum", ic.train.momentum);
    require(ic.train.momentum >= 0.0 && ic.train.momentum < 1.0, p + ".momentum",
            "must lie in [0, 1)");
    ic.train.batch_size = field<int>(g, p, "batch_size", ic.train.batch_size);
    require(ic.train.batch_size >= 1, p + ".batch_size", "must be >= 1");
    ic.train.grad_clip = field<double>(g, p, "grad_clip", ic.train.grad_clip);
    require(ic.train.grad_clip >= 0.0, p + ".grad_clip", "must be >= 0");
    cfg.igtt.eval_cl = field<bool>(g, p, "eval_cl", cfg.igtt.eval_cl);
    cfg.igtt.snapshot_every = field<int>(g, p, "snapshot_every", cfg.igtt.snapshot_every);
    require(cfg.igtt.snapshot_every >= 0, p + ".snapshot_every", "must be >= 0");
  }

  if (root.contains("analysis")) {
    const json& a = root["analysis"];
    const std::string p = "$.analysis";
    reject_unknown(a, p, {"recipe", "side", "bandwidth", "q_rcl", "q_rl"});
    auto& as = cfg.analysis;
    as.recipe = field<std::string>(a, p, "recipe", as.recipe);
    require(as.recipe == "phantom" || as.recipe == "labels", p + ".recipe",
            "expected phantom or labels");
    as.side = field<int>(a, p, "side", as.side);
    require(as.side >= 64, p + ".side", "must be >= 64");
    as.bandwidth = field<int>(a, p, "bandwidth", default_bandwidth(as.side));
    require(as.bandwidth >= 1, p + ".bandwidth", "must be >= 1");
    as.q_rcl = matrix_field(a, p, "q_rcl", as.q_rcl);
    as.q_rl = matrix_field(a, p, "q_rl", as.q_rl);
    require(as.q_rcl.size() == 2, p + ".q_rcl", "must be 2x2");
    require(as.q_rl.size() == 2, p + ".q_rl", "must be 2x2");
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("$: ") + e.what());
  }
  return parse_config(text);
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["dataset_dir"] = c.dataset_dir;
  j["dataset"] = {{"generator", c.dataset.generator}, {"count", c.dataset.count},
                  {"height", c.dataset.height},       {"width", c.dataset.width},
                  {"n_objects", c.dataset.n_objects}, {"n_classes", c.dataset.n_classes},
                  {"train_fraction", c.dataset.train_fraction}};
  j["noise"] = {{"type", noise_type_name(c.noise.type)},
                {"p", c.noise.p},
                {"iterations", c.noise.iterations},
                {"ntm", c.noise.ntm}};
  j["train"] = {{"learning_rate", c.train.learning_rate}, {"momentum", c.train.momentum},
                {"batch_size", c.train.batch_size},       {"epochs", c.train.epochs},
                {"loss", loss_name(c.train.loss)}, {"grad_clip", c.train.grad_clip}};
  const auto& ic = c.igtt.config;
  j["igtt"] = {{"threshold_count", ic.threshold_count},
               {"max_iters", ic.max_iters},
               {"ems_radius", ic.ems_radius},
               {"ems_sample_prob", ic.ems_sample_prob},
               {"use_ems", ic.use_ems},
               {"rl_init", ic.rl_init},
               {"rl_init_prob", ic.rl_init_prob},
               {"bright_foreground", ic.bright_foreground},
               {"eval_cl", c.igtt.eval_cl},
               {"snapshot_every", c.igtt.snapshot_every},
               {"learning_rate", ic.train.learning_rate},
               {"momentum", ic.train.momentum},
               {"batch_size", ic.train.batch_size},
               {"grad_clip", ic.train.grad_clip}};
  j["analysis"] = {{"recipe", c.analysis.recipe}, {"side", c.analysis.side},
                   {"bandwidth", c.analysis.bandwidth}, {"q_rcl", c.analysis.q_rcl},
                   {"q_rl", c.analysis.q_rl}};
  return j.dump(2);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  // Output location does not change results, so it is not hashed.
  ExperimentConfig copy = cfg;
  copy.output_dir.clear();
  copy.dataset_dir.clear();
  return fnv1a64(config_to_json(copy));
}

std::string noise_tag(const NoiseSpec& noise) {
  const std::string name = noise_type_name(noise.type);
  auto num = [](double v) { return format_double(v, "%g"); };
  switch (noise.type) {
    case NoiseType::kCL:
    case NoiseType::kPclSkeleton:
      return name;
    case NoiseType::kPclDilate:
    case NoiseType::kPclErode:
      return noise.iterations == 1 ? name : name + "_x" + std::to_string(noise.iterations);
    case NoiseType::kRclSample:
    case NoiseType::kRclFlip:
    case NoiseType::kRL:
      return name + "_p" + num(noise.p);
    case NoiseType::kNtm: {
      json j = noise.ntm;
      return name + "_" + hex64(fnv1a64(j.dump())).substr(0, 8);
    }
  }
  return name;
}

std::optional<NoiseTransitionMatrix> implied_ntm(const NoiseSpec& noise, int n_classes) {
  switch (noise.type) {
    case NoiseType::kCL:
      return NoiseTransitionMatrix::identity(n_classes);
    case NoiseType::kRclFlip:
      return NoiseTransitionMatrix::symmetric_flip(n_classes, noise.p);
    case NoiseType::kRL: {
      if (n_classes != 2) return std::nullopt;
      return NoiseTransitionMatrix({{1.0 - noise.p, noise.p}, {1.0 - noise.p, noise.p}});
    }
    case NoiseType::kNtm:
      return NoiseTransitionMatrix(noise.ntm);
    default:
      return std::nullopt;
  }
}

LabelMask apply_noise(const LabelMask& cl, const NoiseSpec& noise, std::uint64_t seed) {
  switch (noise.type) {
    case NoiseType::kCL:
      return cl;
    case NoiseType::kRclSample:
      return random_sample(cl, noise.p, seed);
    case NoiseType::kRclFlip:
      return random_flip(cl, noise.p, seed);
    case NoiseType::kPclDilate: {
      LabelMask m = cl;
      for (int i = 0; i < noise.iterations; ++i) m = dilate(m);
      return m;
    }
    case NoiseType::kPclErode: {
      LabelMask m = cl;
      for (int i = 0; i < noise.iterations; ++i) m = erode(m);
      return m;
    }
    case NoiseType::kPclSkeleton:
      return skeletonize(cl);
    case NoiseType::kRL:
      return random_label(cl.height(), cl.width(), noise.p, seed);
    case NoiseType::kNtm:
      return apply_ntm(cl, NoiseTransitionMatrix(noise.ntm), seed);
  }
  throw InvalidArgument("unknown noise type");
}

// ---------------------------------------------------------------------------
// Manifests

std::string manifest_to_json(const RunManifest& m) {
  json j;
  j["experiment"] = m.experiment;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["input_hash"] = m.input_hash;
  j["artifacts"] = m.artifacts;
  j["wall_clock_seconds"] = m.wall_clock_seconds;
  j["metrics"] = json::object();
  for (const auto& [k, v] : m.metrics) {
    // JSON has no NaN; missing values are stored as null.
    j["metrics"][k] = std::isfinite(v) ? json(v) : json(nullptr);
  }
  j["info"] = m.info;
  return j.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("manifest: invalid JSON: ") + e.what());
  }
  RunManifest m;
  try {
    m.experiment = j.at("experiment").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.input_hash = j.at("input_hash").get<std::string>();
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    for (const auto& [k, v] : j.at("metrics").items()) {
      m.metrics[k] = v.is_null() ? std::nan("") : v.get<double>();
    }
    if (j.contains("info")) m.info = j.at("info").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("manifest: ") + e.what());
  }
  return m;
}

void write_manifest(const fs::path& path, const RunManifest& m) {
  write_file(path, manifest_to_json(m));
}

RunManifest read_manifest(const fs::path& path) { return manifest_from_json(read_file(path)); }

// ---------------------------------------------------------------------------
// Dataset layout

fs::path dataset_dir(const ExperimentConfig& cfg) {
  return cfg.dataset_dir.empty() ? fs::path(cfg.output_dir) / "dataset" : fs::path(cfg.dataset_dir);
}

fs::path labels_dir(const ExperimentConfig& cfg) {
  return fs::path(cfg.output_dir) / "labels" / noise_tag(cfg.noise);
}

fs::path run_dir(const ExperimentConfig& cfg) { return fs::path(cfg.output_dir) / "runs" / cfg.name; }

LoadedDataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw IoError("no dataset at " + dir.string() + " (run `synth` first)");
  }
  json j;
  try {
    j = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  LoadedDataset ds;
  int n_classes = 2;
  if (j.contains("n_classes")) n_classes = j["n_classes"].get<int>();
  for (const auto& s : j.at("samples")) {
    DatasetSample smp{s.at("stem").get<std::string>(), s.at("split").get<std::string>(),
                      s.at("generator").get<std::string>(), s.at("seed").get<std::uint64_t>()};
    const fs::path sub = dir / smp.split;
    Image image = read_image_pgm(sub / (smp.stem + "_img.pgm"));
    LabelMask mask = read_mask_pgm(sub / (smp.stem + "_mask.pgm"), n_classes);
    auto& set = smp.split == "train" ? ds.train : ds.test;
    (smp.split == "train" ? ds.train_samples : ds.test_samples).push_back(smp);
    set.images.push_back(std::move(image));
    set.labels.push_back(std::move(mask));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Commands

RunManifest cmd_synth(const ExperimentConfig& cfg, const CommandOptions& opts) {
  Stopwatch clock;
  const DatasetSpec& d = cfg.dataset;
  const fs::path dir = dataset_dir(cfg);
  ensure_dir(dir / "train");
  ensure_dir(dir / "test");

  const std::uint64_t root = derive_seed(cfg.seed, "dataset");
  std::vector<std::size_t> order(static_cast<std::size_t>(d.count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(root, "split"));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(d.train_fraction * d.count));
  std::vector<std::string> split(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) split[order[r]] = r < n_train ? "train" : "test";

  std::vector<SyntheticSample> samples(order.size());
  std::vector<std::string> generators(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    generators[i] = d.generator == "mixed" ? (i % 2 == 0 ? "curvilinear" : "blobs") : d.generator;
  }
  parallel_for(samples.size(), opts.threads, [&](std::size_t i) {
    samples[i] = generate(d, generators[i], derive_seed(root, "sample", i));
  });

  json j;
  j["generator"] = d.generator;
  j["n_classes"] = d.generator == "multiclass" ? d.n_classes : 2;
  j["samples"] = json::array();
  std::map<std::string, int> counts;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string stem = sample_stem(i);
    write_sample(dir / split[i], stem, samples[i]);
    j["samples"].push_back({{"stem", stem},
                            {"split", split[i]},
                            {"generator", generators[i]},
                            {"seed", samples[i].seed}});
    ++counts[generators[i]];
  }
  RunManifest m;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string stem = sample_stem(i);
    m.artifacts[stem + "_img"] = split[i] + "/" + stem + "_img.pgm";
    m.artifacts[stem + "_mask"] = split[i] + "/" + stem + "_mask.pgm";
  }
  j["generator_counts"] = counts;
  write_file(dir / "manifest.json", j.dump(2) + "\n");

  m.experiment = cfg.name;
  m.command = "synth";
  m.config_hash = hex64(config_hash(cfg));
  m.input_hash = hex64(fnv1a64(""));
  m.artifacts["dataset_manifest"] = "manifest.json";
  m.metrics["train_count"] = static_cast<double>(n_train);
  m.metrics["test_count"] = static_cast<double>(order.size() - n_train);
  for (const auto& [g, c] : counts) m.metrics["count_" + g] = c;
  m.wall_clock_seconds = clock.seconds();
  write_manifest(dir / "synth_manifest.json", m);
  return m;
}

RunManifest cmd_corrupt(const ExperimentConfig& cfg, const CommandOptions& opts) {
  Stopwatch clock;
  const fs::path data = dataset_dir(cfg);
  const LoadedDataset ds = load_dataset(data);
  const fs::path out = labels_dir(cfg);
  ensure_dir(out);
  const std::uint64_t root = derive_seed(cfg.seed, "noise/" + noise_tag(cfg.noise));

  const std::size_t n = ds.train.images.size();
  std::vector<LabelMask> noisy(n);
  parallel_for(n, opts.threads, [&](std::size_t i) {
    noisy[i] = apply_noise(ds.train.labels[i], cfg.noise, derive_seed(root, "sample", i));
  });
  RunManifest m;
  m.experiment = cfg.name;
  m.command = "corrupt";
  m.config_hash = hex64(config_hash(cfg));
  std::vector<double> rates;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string file = ds.train_samples[i].stem + "_mask.pgm";
    write_mask_pgm(out / file, noisy[i]);
    m.artifacts[ds.train_samples[i].stem] = file;
    rates.push_back(pixel_error_rate(noisy[i], ds.train.labels[i]));
  }
  m.input_hash = hex64(hash_files(sorted_files(data), data));
  m.metrics["pixel_error_rate"] = mean_of(rates);
  m.info["noise_type"] = noise_type_name(cfg.noise.type);
  m.info["noise_tag"] = noise_tag(cfg.noise);
  m.wall_clock_seconds = clock.seconds();
  write_manifest(out / "manifest.json", m);
  return m;
}

RunManifest cmd_train(const ExperimentConfig& cfg, const CommandOptions& opts) {
  Stopwatch clock;
  const fs::path data = dataset_dir(cfg);
  const LoadedDataset ds = load_dataset(data);
  const fs::path lab = labels_dir(cfg);
  if (!fs::exists(lab / "manifest.json")) {
    throw IoError("no labels at " + lab.string() + " (run `corrupt` first)");
  }
  LabelledSet train;
  train.images = ds.train.images;
  for (const auto& s : ds.train_samples) {
    train.labels.push_back(read_mask_pgm(lab / (s.stem + "_mask.pgm"), 2));
  }
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "train");
  tc.threads = opts.threads;
  const TrainResult result = train_supervised(train, tc, &ds.test);

  const fs::path out = run_dir(cfg);
  ensure_dir(out);
  save_checkpoint(out / "model.ckpt", result.params);
  write_history_csv((out / "history.csv").string(), result.history);

  std::vector<EvaluationRow> rows;
  std::vector<double> dices;
  for (std::size_t i = 0; i < ds.test.images.size(); ++i) {
    const ProbabilityMap p = forward(result.params, ds.test.images[i]);
    const MetricsRecord rec = evaluate(binarize(p), p, ds.test.labels[i]);
    rows.push_back({ds.test_samples[i].stem, "segnet", rec});
    dices.push_back(rec.dice);
  }
  write_evaluation_csv((out / "metrics.csv").string(), rows);

  RunManifest m;
  m.experiment = cfg.name;
  m.command = "train";
  m.config_hash = hex64(config_hash(cfg));
  std::vector<fs::path> inputs = sorted_files(data);
  m.input_hash = hex64(hash_files(inputs, data) ^ hash_files(sorted_files(lab), lab));
  m.artifacts = {{"checkpoint", "model.ckpt"}, {"history", "history.csv"}, {"metrics", "metrics.csv"}};
  m.metrics["final_test_dice"] = result.history.test_dice.back();
  m.metrics["max_test_dice"] =
      *std::max_element(result.history.test_dice.begin(), result.history.test_dice.end());
  m.metrics["final_train_loss"] = result.history.train_loss.back();
  m.metrics["mean_test_dice"] = mean_of(dices);
  m.info["noise_type"] = noise_type_name(cfg.noise.type);
  m.info["noise_tag"] = noise_tag(cfg.noise);
  m.wall_clock_seconds = clock.seconds();
  write_manifest(out / "manifest.json", m);
  return m;
}

RunManifest cmd_igtt(const ExperimentConfig& cfg, const CommandOptions& opts) {
  Stopwatch clock;
  const fs::path data = dataset_dir(cfg);
  const LoadedDataset ds = load_dataset(data);
  IgttConfig ic = cfg.igtt.config;
  ic.train.seed = derive_seed(cfg.seed, "igtt");
  ic.train.threads = opts.threads;

  const fs::path out = run_dir(cfg);
  ensure_dir(out);
  IgttObserver observer;
  if (cfg.igtt.snapshot_every > 0) {
    ensure_dir(out / "snapshots");
    observer = [&](const IgttState& st) {
      if (st.iteration % cfg.igtt.snapshot_every != 0) return;
      for (std::size_t i = 0; i < st.pseudo_labels.size(); ++i) {
        write_mask_pgm(out / "snapshots" /
                           ("iter" + std::to_string(st.iteration) + "_" + ds.train_samples[i].stem +
                            ".pgm"),
                       st.pseudo_labels[i]);
      }
    };
  }
  const IgttState state =
      igtt_train(ds.train.images, ic, cfg.igtt.eval_cl ? &ds.test : nullptr, observer);
  save_checkpoint(out / "model.ckpt", state.params);
  write_igtt_log_csv((out / "igtt_log.csv").string(), state.history);

  std::vector<EvaluationRow> rows;
  std::map<std::string, std::vector<double>> dices;
  for (std::size_t i = 0; i < ds.test.images.size(); ++i) {
    const Image& img = ds.test.images[i];
    const LabelMask& gt = ds.test.labels[i];
    const ProbabilityMap p = forward(state.params, img);
    const auto sel = igtt_segment(p, img, ic);
    const std::string& stem = ds.test_samples[i].stem;
    rows.push_back({stem, "igtt", evaluate(sel.mask, p, gt)});
    rows.push_back({stem, "otsu", evaluate(otsu(img).mask, img, gt)});
    rows.push_back({stem, "agt",
                    evaluate(adaptive_gaussian_threshold(img, kDefaultAgtWindow, kDefaultAgtOffset),
                             img, gt)});
  }
  for (const auto& r : rows) dices[r.method].push_back(r.metrics.dice);
  write_evaluation_csv((out / "metrics.csv").string(), rows);

  RunManifest m;
  m.experiment = cfg.name;
  m.command = "igtt";
  m.config_hash = hex64(config_hash(cfg));
  m.input_hash = hex64(hash_files(sorted_files(data), data));
  m.artifacts = {{"checkpoint", "model.ckpt"}, {"iteration_log", "igtt_log.csv"},
                 {"metrics", "metrics.csv"}};
  if (cfg.igtt.snapshot_every > 0) m.artifacts["snapshots"] = "snapshots";
  for (const auto& [method, v] : dices) m.metrics["mean_dice_" + method] = mean_of(v);
  m.info["use_ems"] = ic.use_ems ? "true" : "false";
  m.wall_clock_seconds = clock.seconds();
  write_manifest(out / "manifest.json", m);
  return m;
}

RunManifest cmd_analyze(const ExperimentConfig& cfg, const CommandOptions&) {
  Stopwatch clock;
  const fs::path out = run_dir(cfg);
  ensure_dir(out);
  RunManifest m;
  m.experiment = cfg.name;
  m.command = "analyze";
  m.config_hash = hex64(config_hash(cfg));
  m.input_hash = hex64(fnv1a64(""));
  const AnalysisSpec& a = cfg.analysis;

  std::ostringstream csv, report;
  if (a.recipe == "phantom") {
    const NoiseTransitionMatrix q_rcl(a.q_rcl), q_rl(a.q_rl);
    const PhantomResult r =
        phantom_experiment(a.side, q_rcl, q_rl, a.bandwidth, derive_seed(cfg.seed, "phantom"));
    const MetaStructureReport clr =
        analyze_noisy_label(r.cl_mask, r.cl_mask, NoiseTransitionMatrix::identity(2), 1, a.bandwidth);
    const std::pair<const char*, const DensityMap*> maps[] = {
        {"cl", &r.cl_density}, {"rcl", &r.rcl_density}, {"rl", &r.rl_density}};
    for (const auto& [name, map] : maps) {
      write_density_pgm(out / (std::string(name) + "_density.pgm"), *map);
      write_density_text(out / (std::string(name) + "_density.txt"), *map);
      m.artifacts[std::string(name) + "_heatmap"] = std::string(name) + "_density.pgm";
      m.artifacts[std::string(name) + "_density"] = std::string(name) + "_density.txt";
    }
    write_mask_pgm(out / "cl_mask.pgm", r.cl_mask);
    write_mask_pgm(out / "rcl_mask.pgm", r.rcl_mask);
    write_mask_pgm(out / "rl_mask.pgm", r.rl_mask);
    csv << "label,ntm_rank,class_count,density_correlation\r\n";
    const std::pair<const char*, const MetaStructureReport*> reps[] = {
        {"CL", &clr}, {"RCL", &r.rcl}, {"RL", &r.rl}};
    for (const auto& [name, rep] : reps) {
      csv << name << ',' << rep->ntm_rank << ',' << rep->class_count_estimate << ','
          << format_double(rep->density_correlation_to_cl) << "\r\n";
      report << name << ": rank R = " << rep->ntm_rank << ", class count D = "
             << rep->class_count_estimate
             << ", density correlation to CL = " << format_double(rep->density_correlation_to_cl, "%.4f")
             << '\n';
      for (const auto& reg : rep->regions) {
        report << "  region " << reg.cl_class << ": " << reg.interior_pixels << " interior px";
        if (reg.dropped) {
          report << " (dropped: smaller than one window)\n";
        } else {
          report << ", mean window fraction " << format_double(reg.mean[0], "%.4f")
                 << ", variance " << format_double(reg.variance[0], "%.3g") << '\n';
        }
      }
    }
    m.metrics["rcl_class_count"] = r.rcl.class_count_estimate;
    m.metrics["rcl_rank"] = r.rcl.ntm_rank;
    m.metrics["rl_class_count"] = r.rl.class_count_estimate;
    m.metrics["rl_rank"] = r.rl.ntm_rank;
    m.metrics["rcl_correlation"] = r.rcl.density_correlation_to_cl;
    m.metrics["rl_correlation"] = r.rl.density_correlation_to_cl;
  } else {
    // Analyse a corrupted label set against the dataset's clean masks.
    const fs::path data = dataset_dir(cfg);
    const LoadedDataset ds = load_dataset(data);
    const fs::path lab = labels_dir(cfg);
    if (!fs::exists(lab / "manifest.json")) {
      throw IoError("no labels at " + lab.string() + " (run `corrupt` first)");
    }
    m.input_hash = hex64(hash_files(sorted_files(data), data) ^ hash_files(sorted_files(lab), lab));
    const int n_classes = ds.train.labels.empty() ? 2 : ds.train.labels.front().n_classes();
    const auto q = implied_ntm(cfg.noise, n_classes);
    csv << "sample_id,ntm_rank,class_count,density_correlation\r\n";
    std::vector<double> corr;
    for (std::size_t i = 0; i < ds.train_samples.size(); ++i) {
      const LabelMask& cl = ds.train.labels[i];
      const LabelMask noisy =
          read_mask_pgm(lab / (ds.train_samples[i].stem + "_mask.pgm"), cl.n_classes());
      const int cls = 1;
      const auto est = n_classes == 2 ? estimate_class_count(noisy, cl, cls, a.bandwidth)
                                      : estimate_class_count_all(noisy, cl, a.bandwidth);
      const double r = density_correlation(kde_density(noisy, cls, a.bandwidth),
                                           kde_density(cl, cls, a.bandwidth));
      corr.push_back(r);
      csv << ds.train_samples[i].stem << ',' << (q ? std::to_string(ntm_rank(*q)) : "") << ','
          << est.count << ',' << format_double(r) << "\r\n";
    }
    m.metrics["mean_density_correlation"] = mean_of(corr);
    if (q) m.metrics["ntm_rank"] = ntm_rank(*q);
    report << "label set " << noise_tag(cfg.noise) << ": mean density correlation to CL = "
           << format_double(mean_of(corr), "%.4f") << '\n';
  }
  write_file(out / "correlations.csv", csv.str());
  write_file(out / "report.txt", report.str());
  m.artifacts["correlations"] = "correlations.csv";
  m.artifacts["report"] = "report.txt";
  m.info["recipe"] = a.recipe;
  m.wall_clock_seconds = clock.seconds();
  write_manifest(out / "manifest.json", m);
  return m;
}

RankingVerdict ranking_verdict(double cl, double rcl, double pcl, double rl) {
  RankingVerdict v;
  v.pass = std::abs(cl - rcl) <= kRankCleanGap && rcl - pcl >= kRankRclOverPcl &&
           pcl - rl >= kRankPclOverRl;
  v.line = std::string("CL ≈ RCL > PCL > RL: ") + (v.pass ? "PASS" : "FAIL");
  return v;
}

ReportResult cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: at least one run directory is required");
  struct Row {
    RunManifest manifest;
    fs::path dir;
  };
  std::vector<Row> rows;
  ReportResult res;
  for (const auto& d : run_dirs) {
    const fs::path mp = d / "manifest.json";
    if (!fs::exists(mp)) {
      res.gaps.push_back(d.string() + ": no manifest (incomplete run)");
      continue;
    }
    rows.push_back({read_manifest(mp), d});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.manifest.experiment != b.manifest.experiment
               ? a.manifest.experiment < b.manifest.experiment
               : a.dir < b.dir;
  });

  auto metric = [&](const Row& r, const std::string& key) -> std::optional<double> {
    const auto it = r.manifest.metrics.find(key);
    if (it == r.manifest.metrics.end() || !std::isfinite(it->second)) {
      res.gaps.push_back(r.manifest.experiment + ": missing " + key);
      return std::nullopt;
    }
    return it->second;
  };
  auto cell = [](const std::optional<double>& v) {
    return v ? format_double(*v, "%.4f") : std::string("n/a");
  };

  std::ostringstream md, csv;
  csv << "experiment,command,noise,metric,value\r\n";
  md << "# Run summary\n\n";

  // Supervised runs and the label-family ordering verdict.
  std::map<std::string, std::vector<double>> family;
  bool any_train = false;
  md << "## Supervised training\n\n| experiment | labels | final test Dice | max test Dice |\n"
     << "|---|---|---|---|\n";
  for (const auto& r : rows) {
    if (r.manifest.command != "train") continue;
    any_train = true;
    const auto noise = r.manifest.info.count("noise_tag") ? r.manifest.info.at("noise_tag") : "?";
    const auto type = r.manifest.info.count("noise_type") ? r.manifest.info.at("noise_type") : "?";
    const auto fin = metric(r, "final_test_dice");
    const auto top = metric(r, "max_test_dice");
    md << "| " << r.manifest.experiment << " | " << noise << " | " << cell(fin) << " | " << cell(top)
       << " |\n";
    csv << r.manifest.experiment << ",train," << noise << ",final_test_dice," << cell(fin) << "\r\n";
    if (fin) family[type.substr(0, type.find('-'))].push_back(*fin);
  }
  if (!any_train) md << "| (none) | | | |\n";
  md << '\n';
  if (family.count("CL") && family.count("RCL") && family.count("PCL") && family.count("RL")) {
    auto worst_pcl = *std::max_element(family["PCL"].begin(), family["PCL"].end());
    const RankingVerdict v = ranking_verdict(mean_of(family["CL"]), mean_of(family["RCL"]),
                                             worst_pcl, mean_of(family["RL"]));
    res.ranking_pass = v.pass;
    md << "**" << v.line << "**\n\n";
  } else if (any_train) {
    res.gaps.push_back("ranking verdict needs CL, RCL, PCL and RL runs");
  }

  // Unsupervised runs against the classical baselines.
  bool any_igtt = false;
  std::ostringstream ig;
  ig << "## Unsupervised segmentation (mean test Dice)\n\n| experiment | EMS | igtt | otsu | agt |\n"
     << "|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    if (r.manifest.command != "igtt") continue;
    any_igtt = true;
    const auto ems_flag = r.manifest.info.count("use_ems") ? r.manifest.info.at("use_ems") : "?";
    ig << "| " << r.manifest.experiment << " | " << ems_flag;
    for (const char* method : {"igtt", "otsu", "agt"}) {
      const auto v = metric(r, std::string("mean_dice_") + method);
      ig << " | " << cell(v);
      csv << r.manifest.experiment << ",igtt," << method << ",mean_dice," << cell(v) << "\r\n";
    }
    ig << " |\n";
  }
  if (any_igtt) md << ig.str() << '\n';

  for (const auto& r : rows) {
    if (r.manifest.command != "analyze") continue;
    md << "## Analysis: " << r.manifest.experiment << "\n\n";
    for (const auto& [k, v] : r.manifest.metrics) {
      md << "- " << k << ": " << format_double(v, "%.4f") << '\n';
      csv << r.manifest.experiment << ",analyze,," << k << ',' << format_double(v) << "\r\n";
    }
    md << '\n';
  }
  if (!res.gaps.empty()) {
    md << "## Gaps\n\n";
    for (const auto& g : res.gaps) md << "- " << g << '\n';
  }
  res.markdown = md.str();
  res.csv = csv.str();
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_file(out_dir / "summary.md", res.markdown);
    write_file(out_dir / "summary.csv", res.csv);
  }
  return res;
}

}  // namespace metastruct
