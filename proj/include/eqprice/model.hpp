#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eqprice/coefficient.hpp"
#include "eqprice/linalg.hpp"

namespace eqprice {

struct Dimensions {
  std::size_t n = 1;   ///< securities
  std::size_t d0 = 1;  ///< common Brownian dimension
  std::size_t d = 0;   ///< idiosyncratic Brownian dimension
  std::size_t N = 1;   ///< minor agents
};

/// Gradient of a major cost term: affine c(t,c0) x + h(t,c0), or a general callable.
struct MajorGradient {
  using GradientFn = std::function<Vector(double t, const Vector& x, const Vector& c0)>;
  using ValueFn = std::function<double(double t, const Vector& x, const Vector& c0)>;

  Coefficient c;  ///< n x n
  Coefficient h;  ///< n x 1
  GradientFn callable;
  ValueFn primitive;  ///< needed for cost evaluation with a callable gradient

  bool affine() const { return !callable; }
  Vector gradient(double t, const Vector& x, const Vector& c0) const;
  /// Primitive with zero constant term: 1/2 <x,cx> + <h,x> in the affine case.
  double value(double t, const Vector& x, const Vector& c0) const;
};

struct MinorCoefficients {
  Coefficient l;       ///< n x 1
  Coefficient sigma0;  ///< n x d0
  Coefficient sigma;   ///< n x d
  Coefficient cf;      ///< n x n
  Coefficient hf;      ///< n x 1
  Coefficient cg;      ///< n x n, evaluated at t = T
  Coefficient hg;      ///< n x 1, evaluated at t = T

  static MinorCoefficients zero(const Dimensions& dims);
};

struct MajorCoefficients {
  Coefficient l0;  ///< normalized drift, n x 1
  Coefficient s0;  ///< normalized volatility, n x d0
  MajorGradient dfdx;
  MajorGradient dgdx;
  Vector chi0;  ///< normalized initial position

  static MajorCoefficients zero(const Dimensions& dims);
};

enum class CommonLawKind { constant, gaussian_walk };

/// c0_{k+1} = c0_k + drift dt + vol dW0 (vol = 0 and drift = 0 for the constant law).
struct CommonNoiseLaw {
  CommonLawKind kind = CommonLawKind::constant;
  Vector initial;
  Vector drift;
  Matrix vol;  ///< n x d0
};

/// One atom of the joint law of (xi, c^i); c^i is constant in time.
struct Atom {
  double weight = 1.0;
  Vector xi;
  Vector ci;
};

struct ModelSpec {
  Dimensions dims;
  double delta = 0.0;
  Coefficient lambda_minor;  ///< Lambda(t, c0), n x n
  Coefficient lambda_major;  ///< Lambda0(t, c0), n x n
  MinorCoefficients minor;   ///< shared bundle
  std::vector<MinorCoefficients> agents;  ///< per-agent bundles; empty means homogeneous
  MajorCoefficients major;
  CommonNoiseLaw c0_law;
  std::vector<Atom> atoms;
  bool maturity_mode = false;

  bool homogeneous() const { return agents.empty(); }
  const MinorCoefficients& minor_of(std::size_t agent) const {
    return agents.empty() ? minor : agents.at(agent);
  }

  /// All coefficients zero, Lambda = Lambda0 = I, single atom at the origin.
  static ModelSpec zero(const Dimensions& dims);
};

/// Throws ValidationError naming the offending coefficient or constant.
void validate(const ModelSpec& spec);

struct SamplePoint {
  double t = 0.0;
  Vector c0;
  Vector ci;
};

/// Times {0, T/2, T}, c0 values spanning the law's range, c^i from the atoms.
std::vector<SamplePoint> default_sample_points(const ModelSpec& spec, double T);

enum class ClauseStatus { passed, failed, inconclusive };

struct ClauseResult {
  std::string clause;
  ClauseStatus status = ClauseStatus::passed;
  std::string detail;
};

struct AssumptionReport {
  std::vector<ClauseResult> clauses;
  std::optional<double> gamma_f, gamma_g, gamma0_f, gamma0_g;
  std::optional<double> a_const;
  std::optional<double> lambda_lower, lambda_upper;
  std::optional<double> major_lower, major_upper;  ///< bounds of Lambda0 + 2 Lambda
  std::optional<double> lipschitz0;
  std::optional<double> beta1, mu1;
  std::size_t N = 1;
  std::vector<std::string> failures;

  const ClauseResult* find(const std::string& clause) const;
  bool passed(const std::string& clause) const;
  /// No clause failed. Inconclusive clauses do not count as failures.
  bool all_passed() const;
  void add(std::string clause, ClauseStatus status, std::string detail);
};

/// Minor-A(i), Minor-A(iv) and Minor-B. candidate_c defaults to the average of
/// c^g over the sample points and agents.
AssumptionReport check_minor_assumptions(const ModelSpec& spec, const std::optional<Matrix>& candidate_c,
                                         const std::vector<SamplePoint>& samples);

struct SecantOptions {
  double box_lo = -10.0;
  double box_hi = 10.0;
  std::size_t pairs = 256;
  std::uint64_t seed = 7;
};

/// Major(i), Major(iv), Major(v).
AssumptionReport check_major_assumptions(const ModelSpec& spec, const std::vector<SamplePoint>& samples,
                                         const SecantOptions& secant = {});

/// Merged minor and major reports plus beta1 = min(gamma0_f/N, gamma_f) and
/// mu1 = min(gamma0_g/N, gamma_g - a).
AssumptionReport check_assumptions(const ModelSpec& spec, const std::vector<SamplePoint>& samples,
                                   const std::optional<Matrix>& candidate_c = std::nullopt,
                                   const SecantOptions& secant = {});

/// Unnormalized major coefficients for N agents; the engine itself works in
/// normalized units x0 = X0 / N.
class ScaledMajor {
 public:
  ScaledMajor(const MajorCoefficients& major, std::size_t N);
  std::size_t N() const { return N_; }
  Vector l0(double t, const Vector& c0) const;
  Matrix s0(double t, const Vector& c0) const;
  Vector dfdx(double t, const Vector& X0, const Vector& c0) const;
  Vector dgdx(const Vector& X0, const Vector& c0, double T) const;
  double f0(double t, const Vector& X0, const Vector& c0) const;
  double g0(const Vector& X0, const Vector& c0, double T) const;
  Vector chi0() const;
  /// The unnormalized coefficients themselves, usable as a major bundle.
  const MajorCoefficients& coefficients() const { return major_; }

 private:
  MajorCoefficients major_;
  std::size_t N_;
};

ScaledMajor scale_major(const ModelSpec& spec, std::size_t N);

}  // namespace eqprice
