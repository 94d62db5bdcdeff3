#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <random>

namespace abcsde
{

/// What a random substream is used for. Keying streams by purpose keeps
/// streams aligned when a consumer (e.g. the simulator) is skipped.
enum class StreamPurpose : std::uint64_t
{
  Proposal = 1,
  Acceptance = 2,
  Simulation = 3,
  ErrorModel = 4,
  Initialization = 5,
  Pilot = 6,
  Resampling = 7,
  DataGeneration = 8,
  CrossValidation = 9,
  Test = 10,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept
{
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ (Blackman & Vigna). Cheap to seed, which matters because a
/// fresh stream is derived for every (iteration, purpose) pair.
class Xoshiro256pp
{
public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t seed = 0x853c49e6748fea9bULL) noexcept { reseed(seed); }

  void reseed(std::uint64_t seed) noexcept
  {
    std::uint64_t sm = seed;
    for (auto& word : state_)
      word = splitmix64(sm);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept
  {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  friend bool operator==(const Xoshiro256pp&, const Xoshiro256pp&) = default;

private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept
  {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

using Rng = Xoshiro256pp;

/// Deterministic stream for (master seed, chain, index, purpose).
inline Rng substream(std::uint64_t master_seed, std::uint64_t chain, std::uint64_t index,
                     StreamPurpose purpose) noexcept
{
  std::uint64_t h = master_seed;
  std::uint64_t key = splitmix64(h);
  for (std::uint64_t word : {chain, index, static_cast<std::uint64_t>(purpose)})
  {
    std::uint64_t s = key ^ (word * 0xd1342543de82ef95ULL);
    key = splitmix64(s);
  }
  return Rng(key);
}

/// Uniform on the open interval (0, 1).
template <typename Engine>
inline double uniform01(Engine& rng)
{
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

template <typename Engine>
inline double standard_normal(Engine& rng)
{
  // libstdc++'s polar method; a fresh distribution per call keeps draws a
  // pure function of the engine state.
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

} // namespace abcsde
