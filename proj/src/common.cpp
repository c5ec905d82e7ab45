#include "notescreen/common.hpp"
#include "notescreen/random.hpp"

#include <limits>

namespace notescreen {

std::string_view label_name(Label label) {
  return label == Label::Epilepsy ? "Epilepsy" : "PNES";
}

Label parse_label(std::string_view text) {
  if (text == "Epilepsy") return Label::Epilepsy;
  if (text == "PNES") return Label::PNES;
  throw DataError("unknown label \"" + std::string(text) + "\" (expected \"Epilepsy\" or \"PNES\")");
}

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 1));
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  // Rejection sampling removes the modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double Rng::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

}  // namespace notescreen
