#pragma once

#include <cstdint>
#include <random>

namespace epimix {

// Deterministic variate source. Every sampling algorithm is implemented here
// on top of the raw mt19937_64 stream: the engine itself is fully specified
// by the standard, while std::normal_distribution and friends are not, so
// going through them would break bit-reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform on the open interval (0,1); never returns an endpoint.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal, Box-Muller. One fresh pair of uniforms per call; the
  // second variate is discarded so calls map 1:1 onto the stream.
  double normal();
  double normal(double mean, double sd);

  // Gamma(shape, rate), mean shape/rate. Marsaglia-Tsang squeeze method.
  double gamma(double shape, double rate);

  double beta(double a, double b);

  // Poisson(mean). Knuth product method below 30, Hormann PTRD above.
  std::int64_t poisson(double mean);

  // Negative binomial with mean mu and dispersion psi (variance mu+mu^2/psi),
  // drawn as a gamma-Poisson mixture.
  std::int64_t neg_binomial(double mu, double psi);

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// Derives a statistically independent stream seed from (base, stream) with a
// splitmix64 finalizer. Used for chain and per-draw substreams.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace epimix
