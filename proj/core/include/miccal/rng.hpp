#pragma once

#include <cstdint>
#include <random>

namespace miccal {

// splitmix64; used to derive independent stream seeds from one master seed
// so that parallel stages stay reproducible regardless of scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based seed splitter. derive(k) is a pure function of (master, k).
class SeedSplitter {
 public:
  explicit SeedSplitter(std::uint64_t master) : master_(master) {}

  std::uint64_t derive(std::uint64_t stream) const {
    return splitmix64(master_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
  }

  std::mt19937_64 engine(std::uint64_t stream) const {
    return std::mt19937_64(derive(stream));
  }

 private:
  std::uint64_t master_;
};

}  // namespace miccal
