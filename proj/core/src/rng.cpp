#include "metastruct/rng.hpp"

namespace metastruct {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose) {
  return splitmix64(splitmix64(root) ^ fnv1a64(purpose));
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index) {
  return splitmix64(derive_seed(root, purpose) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

}  // namespace metastruct
