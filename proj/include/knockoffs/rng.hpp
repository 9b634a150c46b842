#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace knockoffs {

// All randomness flows through std::mt19937_64 (64-bit generator, period
// 2^19937 - 1). Substreams are derived from (seed, tag, index) with a
// splitmix64 hash chain feeding a seed_seq, so replication r of a cell sees
// the same draws no matter how replications are scheduled across threads.
using RngStream = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream tags. Each logical consumer of randomness gets its own tag so adding
// draws to one consumer never perturbs another.
enum : std::uint64_t {
  kStreamBeta = 1,       // signal positions and signs, one per cell
  kStreamTrain = 2,      // moment-estimation training sample, one per cell
  kStreamRep = 3,        // per-replication covariates/response/knockoffs
  kStreamSubsample = 4,  // row subsampling in the select pipeline
  kStreamSelect = 5,     // knockoff noise in the select pipeline
};

inline RngStream make_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ splitmix64(index + 0x9e3779b97f4a7c15ULL));
  std::uint32_t words[8];
  for (int i = 0; i < 4; ++i) {
    h = splitmix64(h);
    words[2 * i] = static_cast<std::uint32_t>(h);
    words[2 * i + 1] = static_cast<std::uint32_t>(h >> 32);
  }
  std::seed_seq seq(words, words + 8);
  return RngStream(seq);
}

// Fills in column-major order (the storage order) so the draw sequence is
// part of the deterministic contract.
inline void fill_standard_normal(Eigen::Ref<Eigen::MatrixXd> out, RngStream& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = normal(rng);
}

inline Eigen::MatrixXd standard_normal_matrix(Eigen::Index n, Eigen::Index p, RngStream& rng) {
  Eigen::MatrixXd z(n, p);
  fill_standard_normal(z, rng);
  return z;
}

inline Eigen::VectorXd standard_normal_vector(Eigen::Index n, RngStream& rng) {
  Eigen::VectorXd z(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
  return z;
}

}  // namespace knockoffs
