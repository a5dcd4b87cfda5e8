#pragma once

#include <span>
#include <utility>
#include <vector>

#include "mild/gauss.hpp"
#include "mild/numkit.hpp"

namespace mild::hsmm {

using numkit::Index;
using numkit::Matrix;
using numkit::Vector;

struct DurationStats {
  double mean = 1.0;
  double std = 1.0;

  bool operator==(const DurationStats&) const = default;
};

enum class Recursion { kHmm, kHsmm };
enum class Emission { kFull, kMarginalFirst, kDropped };

/// Hidden semi-Markov model over a joint (agent 1, agent 2) space.
///
/// `transition` is the Markov transition matrix estimated by Baum-Welch and
/// may contain self-transitions. The semi-Markov recursion uses the jump
/// matrix derived from it (see jump_transition()), with dwell times governed by
/// `durations`.
struct HsmmModel {
  Vector initial;
  Matrix transition;
  std::vector<gauss::MultivariateGaussian> components;
  std::vector<DurationStats> durations;
  Index max_duration = 1;
  gauss::BlockSplit split;
  double duration_std_floor = 0.5;

  Index size() const { return initial.size(); }
  Index dim() const { return split.dim(); }

  /// Throws Error describing the first violated invariant.
  void validate() const;

  /// Transition matrix with self-loops removed and rows renormalized. A row
  /// with no off-diagonal mass re-enters its own state.
  Matrix jump_transition() const;

  /// K x max_duration matrix; row i holds p_i(d) for d = 1..max_duration,
  /// a Gaussian over the integers renormalized over that support.
  Matrix duration_pmf() const;
};

/// Filter state after the latest step. For the semi-Markov recursion
/// `residual(i, r)` is the normalized probability of occupying state i with
/// r + 1 steps (including the current one) left in the segment.
struct ForwardState {
  Vector weights;
  Matrix residual;
};

/// Causal forward filter. Each step consumes the per-state log emission
/// densities of one observation (all zeros when emissions are dropped).
class ForwardFilter {
 public:
  ForwardFilter(const HsmmModel& model, Recursion mode);

  const Vector& step(const Vector& log_emission);
  const ForwardState& state() const { return state_; }
  /// Sum of the log normalizers so far: log p(z_1..z_t) for full emissions.
  double log_likelihood() const { return log_likelihood_; }
  Index time() const { return time_; }

 private:
  Recursion mode_;
  Vector initial_;
  Matrix transition_;
  Matrix pmf_;
  ForwardState state_;
  double log_likelihood_ = 0.0;
  Index time_ = 0;
};

/// T x K matrix of per-state log emission densities. For kDropped the result
/// is all zeros and only the row count of `observations` is used.
Matrix log_emissions(const HsmmModel& model, const Matrix& observations, Emission emission);

/// Normalized forward variable h_t for every row of `observations`.
Matrix forward_variable(const HsmmModel& model, const Matrix& observations, Recursion mode,
                        Emission emission);

/// Forward variable with emissions dropped, for `steps` time steps.
Matrix forward_variable(const HsmmModel& model, Index steps, Recursion mode);

struct HsmmConfig {
  Index components = 10;
  int max_iters = 100;
  /// Convergence threshold on the change of total log-likelihood.
  double tol = 1e-4;
  double duration_std_floor = 0.5;
  /// max_duration = dmax_factor * longest observed dwell.
  double dmax_factor = 2.0;
  /// Initial probability mass spread over states other than the first.
  double initial_leak = 1e-3;
  /// Components whose total responsibility falls below this are re-seeded.
  double min_component_mass = 1e-3;
};

/// Component i fitted to the i-th equal temporal slice of every demo.
/// Throws InsufficientData if a pooled slice holds fewer than two points.
HsmmModel init_temporal_split(std::span<const Matrix> demos, const gauss::BlockSplit& split,
                              const HsmmConfig& config);

struct FitResult {
  HsmmModel model;
  /// Total log-likelihood evaluated at the start of every iteration.
  std::vector<double> log_likelihood;
  int iterations = 0;
  bool converged = false;
  int reseeded = 0;
};

/// Baum-Welch over initial/transition/component parameters followed by
/// duration statistics from most-likely-path dwell lengths.
FitResult fit_em(HsmmModel model, std::span<const Matrix> demos, const HsmmConfig& config);

/// Total HMM log-likelihood of the demos under the model.
double log_likelihood(const HsmmModel& model, std::span<const Matrix> demos);

struct PriorLookup {
  Index component = 0;
  gauss::MultivariateGaussian first;
  gauss::MultivariateGaussian second;
};

/// Most likely component at step t of the emission-free semi-Markov forward
/// recursion (ties resolve to the lowest index) with its per-agent marginals.
PriorLookup prior_component(const HsmmModel& model, Index t);

/// Argmax component of the emission-free semi-Markov recursion for every step
/// 0..steps-1.
std::vector<Index> prior_schedule(const HsmmModel& model, Index steps);

/// Per-component marginals over the first and second index sets.
std::vector<std::pair<gauss::MultivariateGaussian, gauss::MultivariateGaussian>>
component_marginals(const HsmmModel& model);

/// Index of the largest entry; ties resolve to the lowest index.
Index argmax_lowest(const Vector& v);

/// Incremental Gaussian mixture regression of the second block from the first,
/// weighted by the semi-Markov forward variable with first-block emissions.
class GmrConditioner {
 public:
  explicit GmrConditioner(const HsmmModel& model);

  struct Step {
    Vector weights;
    Vector mean;
    Matrix covariance;
  };

  Step push(const Vector& observed_first);
  Index time() const { return filter_.time(); }

 private:
  std::vector<gauss::MultivariateGaussian> first_marginals_;
  std::vector<gauss::ConditionalMap> maps_;
  ForwardFilter filter_;
};

struct GmrResult {
  Matrix weights;                   // T x K
  Matrix mean;                      // T x |second|
  std::vector<Matrix> covariance;   // T entries
};

/// Responsibilities below this are zeroed before renormalizing.
inline constexpr double kResponsibilityClamp = 1e-8;

GmrResult gmr_condition(const HsmmModel& model, const Matrix& first_sequence);

}  // namespace mild::hsmm
