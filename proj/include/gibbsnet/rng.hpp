#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace gibbsnet {

/// Seeded random stream. Streams built from the same master seed but
/// different stream ids are statistically independent; a (seed, stream)
/// pair always reproduces the same sequence on one platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Fills `out` with independent standard normals, coordinate order.
  void fill_normal(Eigen::Ref<Eigen::VectorXd> out);

  std::mt19937_64& engine() { return engine_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace gibbsnet
