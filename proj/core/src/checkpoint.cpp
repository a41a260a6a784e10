#include "metastruct/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace metastruct {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError(path.string() + ": truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  if (params.values.size() != param_count(params.layers)) {
    throw InvalidArgument("save_checkpoint: parameter vector does not match layer specs");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.in_channels));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.out_channels));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.kernel));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.activation));
  }
  put<std::uint64_t>(out, params.values.size());
  for (double v : params.values) put<double>(out, v);
  if (!out) throw IoError("write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw IoError(path.string() + ": not a metastruct checkpoint");
  }
  if (get<std::uint32_t>(in, path) != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version");
  }
  const auto n_layers = get<std::uint32_t>(in, path);
  if (n_layers == 0 || n_layers > 64) throw IoError(path.string() + ": implausible layer count");
  ModelParams params;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    LayerSpec spec;
    spec.in_channels = static_cast<int>(get<std::uint32_t>(in, path));
    spec.out_channels = static_cast<int>(get<std::uint32_t>(in, path));
    spec.kernel = static_cast<int>(get<std::uint32_t>(in, path));
    const auto act = get<std::uint32_t>(in, path);
    if (act > 1 || spec.kernel % 2 == 0 || spec.in_channels <= 0 || spec.out_channels <= 0) {
      throw IoError(path.string() + ": invalid layer spec");
    }
    spec.activation = static_cast<Activation>(act);
    params.layers.push_back(spec);
  }
  const auto count = get<std::uint64_t>(in, path);
  if (count != param_count(params.layers)) {
    throw IoError(path.string() + ": parameter count does not match layer specs");
  }
  params.values.resize(count);
  for (auto& v : params.values) v = get<double>(in, path);
  return params;
}

}  // namespace metastruct
