#include "mild/hsmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mild/errors.hpp"

namespace mild::hsmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Slices {
  std::vector<Vector> mean;
  std::vector<Matrix> covariance;
  std::vector<Index> count;
};

// Boundaries of the i-th of k equal slices of [0, length).
std::pair<Index, Index> slice_bounds(Index length, Index k, Index i) {
  return {i * length / k, (i + 1) * length / k};
}

Slices temporal_slices(std::span<const Matrix> demos, Index k, Index dim) {
  Slices s;
  s.mean.assign(static_cast<std::size_t>(k), Vector::Zero(dim));
  s.covariance.assign(static_cast<std::size_t>(k), Matrix::Zero(dim, dim));
  s.count.assign(static_cast<std::size_t>(k), 0);
  for (Index i = 0; i < k; ++i) {
    auto& mean = s.mean[static_cast<std::size_t>(i)];
    auto& n = s.count[static_cast<std::size_t>(i)];
    for (const auto& demo : demos) {
      const auto [lo, hi] = slice_bounds(demo.rows(), k, i);
      for (Index t = lo; t < hi; ++t) mean += demo.row(t).transpose();
      n += hi - lo;
    }
    if (n == 0) continue;
    mean /= static_cast<double>(n);
    auto& cov = s.covariance[static_cast<std::size_t>(i)];
    for (const auto& demo : demos) {
      const auto [lo, hi] = slice_bounds(demo.rows(), k, i);
      for (Index t = lo; t < hi; ++t) {
        const Vector d = demo.row(t).transpose() - mean;
        cov.noalias() += d * d.transpose();
      }
    }
    cov /= static_cast<double>(n);
  }
  return s;
}

gauss::MultivariateGaussian regularized_gaussian(const Vector& mean, const Matrix& cov) {
  Matrix sym = 0.5 * (cov + cov.transpose());
  sym = numkit::regularize_spd(sym, numkit::default_jitter(sym));
  return {mean, numkit::cholesky_repaired(sym)};
}

double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (m == kNegInf) return kNegInf;
  return m + std::log((v.array() - m).exp().sum());
}

// Scaled forward-backward for one sequence under the Markov recursion.
struct Posterior {
  Matrix gamma;    // T x K
  Matrix xi_sum;   // K x K, summed over t
  double log_likelihood = 0.0;
};

Posterior forward_backward(const HsmmModel& model, const Matrix& log_b) {
  const Index steps = log_b.rows();
  const Index k = model.size();
  Matrix b(steps, k);
  Vector shift(steps);
  for (Index t = 0; t < steps; ++t) {
    shift(t) = log_b.row(t).maxCoeff();
    b.row(t) = (log_b.row(t).array() - shift(t)).exp();
  }

  Matrix alpha(steps, k);
  Vector scale(steps);
  Posterior post;
  for (Index t = 0; t < steps; ++t) {
    Vector a = (t == 0) ? Vector(model.initial)
                        : Vector(model.transition.transpose() * alpha.row(t - 1).transpose());
    a.array() *= b.row(t).transpose().array();
    scale(t) = a.sum();
    if (!(scale(t) > 0.0)) {
      // Observation impossible under every reachable state.
      post.log_likelihood = kNegInf;
      scale(t) = 1.0;
    }
    alpha.row(t) = a.transpose() / scale(t);
    post.log_likelihood += std::log(scale(t)) + shift(t);
  }

  Matrix beta(steps, k);
  beta.row(steps - 1).setOnes();
  for (Index t = steps - 1; t > 0; --t) {
    const Vector weighted = (b.row(t).array() * beta.row(t).array()).transpose();
    beta.row(t - 1) = (model.transition * weighted).transpose() / scale(t);
  }

  post.gamma = alpha.array() * beta.array();
  for (Index t = 0; t < steps; ++t) {
    const double s = post.gamma.row(t).sum();
    if (s > 0.0) post.gamma.row(t) /= s;
  }
  post.xi_sum = Matrix::Zero(k, k);
  for (Index t = 0; t + 1 < steps; ++t) {
    const Vector right = (b.row(t + 1).array() * beta.row(t + 1).array()).transpose() / scale(t + 1);
    post.xi_sum.noalias() += (alpha.row(t).transpose() * right.transpose())
                                 .cwiseProduct(model.transition);
  }
  return post;
}

std::vector<Index> viterbi(const HsmmModel& model, const Matrix& log_b) {
  const Index steps = log_b.rows();
  const Index k = model.size();
  const Matrix log_t = model.transition.array().log();
  const Vector log_pi = model.initial.array().log();
  Matrix delta(steps, k);
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> back(steps, k);
  delta.row(0) = (log_pi + log_b.row(0).transpose()).transpose();
  for (Index t = 1; t < steps; ++t) {
    for (Index j = 0; j < k; ++j) {
      double best = kNegInf;
      Index arg = 0;
      for (Index i = 0; i < k; ++i) {
        const double v = delta(t - 1, i) + log_t(i, j);
        if (v > best) {
          best = v;
          arg = i;
        }
      }
      delta(t, j) = best + log_b(t, j);
      back(t, j) = arg;
    }
  }
  std::vector<Index> path(static_cast<std::size_t>(steps));
  path.back() = argmax_lowest(delta.row(steps - 1).transpose());
  for (Index t = steps - 1; t > 0; --t) {
    path[static_cast<std::size_t>(t - 1)] = back(t, path[static_cast<std::size_t>(t)]);
  }
  return path;
}

void check_demos(const HsmmModel& model, std::span<const Matrix> demos) {
  if (demos.empty()) throw InsufficientData("HSMM fit needs at least one demo");
  for (const auto& d : demos) {
    if (d.rows() == 0) throw EmptySequence("HSMM fit: empty demo");
    if (d.cols() != model.dim()) {
      throw DimensionMismatch("HSMM fit: demo has " + std::to_string(d.cols()) +
                              " columns, model dimension is " + std::to_string(model.dim()));
    }
  }
}

}  // namespace

Index argmax_lowest(const Vector& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

void HsmmModel::validate() const {
  const Index k = size();
  if (k < 1) throw Error("HsmmModel: needs at least one component");
  if (transition.rows() != k || transition.cols() != k ||
      static_cast<Index>(components.size()) != k || static_cast<Index>(durations.size()) != k) {
    throw DimensionMismatch("HsmmModel: component count disagrees across fields");
  }
  if (!initial.allFinite() || (initial.array() < 0.0).any() ||
      std::abs(initial.sum() - 1.0) > 1e-9) {
    throw Error("HsmmModel: initial probabilities must be non-negative and sum to 1");
  }
  for (Index i = 0; i < k; ++i) {
    if (!transition.row(i).allFinite() || (transition.row(i).array() < 0.0).any() ||
        std::abs(transition.row(i).sum() - 1.0) > 1e-9) {
      throw Error("HsmmModel: transition row " + std::to_string(i) + " must sum to 1");
    }
  }
  split.validate(split.dim());
  for (const auto& c : components) {
    if (c.dim() != dim()) throw DimensionMismatch("HsmmModel: component dimension mismatch");
  }
  for (const auto& d : durations) {
    if (!std::isfinite(d.mean) || !(d.std >= duration_std_floor)) {
      throw Error("HsmmModel: duration std below the configured floor");
    }
  }
  if (max_duration < 1) throw Error("HsmmModel: max_duration must be at least 1");
}

Matrix HsmmModel::jump_transition() const {
  const Index k = size();
  Matrix jump = transition;
  for (Index i = 0; i < k; ++i) {
    jump(i, i) = 0.0;
    const double s = jump.row(i).sum();
    if (s > 1e-12) {
      jump.row(i) /= s;
    } else {
      jump.row(i).setZero();
      jump(i, i) = 1.0;
    }
  }
  return jump;
}

Matrix HsmmModel::duration_pmf() const {
  const Index k = size();
  Matrix pmf(k, max_duration);
  for (Index i = 0; i < k; ++i) {
    const auto& d = durations[static_cast<std::size_t>(i)];
    const double sd = std::max(d.std, 1e-12);
    Vector logp(max_duration);
    for (Index j = 0; j < max_duration; ++j) {
      const double z = (static_cast<double>(j + 1) - d.mean) / sd;
      logp(j) = -0.5 * z * z;
    }
    const double norm = log_sum_exp(logp);
    pmf.row(i) = (logp.array() - norm).exp().transpose();
  }
  return pmf;
}

ForwardFilter::ForwardFilter(const HsmmModel& model, Recursion mode)
    : mode_(mode), initial_(model.initial) {
  if (mode_ == Recursion::kHsmm) {
    transition_ = model.jump_transition();
    pmf_ = model.duration_pmf();
  } else {
    transition_ = model.transition;
  }
}

const Vector& ForwardFilter::step(const Vector& log_emission) {
  const Index k = initial_.size();
  if (log_emission.size() != k) {
    throw DimensionMismatch("ForwardFilter::step: expected " + std::to_string(k) +
                            " log emissions");
  }

  if (mode_ == Recursion::kHmm) {
    Vector prior = (time_ == 0) ? initial_ : Vector(transition_.transpose() * state_.weights);
    Vector logw(k);
    for (Index i = 0; i < k; ++i) {
      logw(i) = prior(i) > 0.0 ? std::log(prior(i)) + log_emission(i) : kNegInf;
    }
    const double m = logw.maxCoeff();
    if (m == kNegInf) throw Error("ForwardFilter: observation has zero probability");
    Vector a = (logw.array() - m).exp();
    const double c = a.sum();
    state_.weights = a / c;
    log_likelihood_ += std::log(c) + m;
  } else {
    const Index dmax = pmf_.cols();
    Matrix pred(k, dmax);
    if (time_ == 0) {
      pred = pmf_.array().colwise() * initial_.array();
    } else {
      const Vector entering = transition_.transpose() * state_.residual.col(0);
      pred.leftCols(dmax - 1) = state_.residual.rightCols(dmax - 1);
      pred.col(dmax - 1).setZero();
      pred += (pmf_.array().colwise() * entering.array()).matrix();
    }
    const Vector occupancy = pred.rowwise().sum();
    Vector logw(k);
    for (Index i = 0; i < k; ++i) {
      logw(i) = occupancy(i) > 0.0 ? std::log(occupancy(i)) + log_emission(i) : kNegInf;
    }
    const double m = logw.maxCoeff();
    if (m == kNegInf) throw Error("ForwardFilter: observation has zero probability");
    for (Index i = 0; i < k; ++i) {
      const double scale = occupancy(i) > 0.0 ? std::exp(log_emission(i) - m) : 0.0;
      pred.row(i) *= scale;
    }
    const double c = pred.sum();
    state_.residual = pred / c;
    state_.weights = state_.residual.rowwise().sum();
    log_likelihood_ += std::log(c) + m;
  }
  ++time_;
  return state_.weights;
}

Matrix log_emissions(const HsmmModel& model, const Matrix& observations, Emission emission) {
  const Index steps = observations.rows();
  const Index k = model.size();
  Matrix out = Matrix::Zero(steps, k);
  switch (emission) {
    case Emission::kDropped:
      break;
    case Emission::kFull:
      for (Index i = 0; i < k; ++i) {
        out.col(i) = gauss::logpdf_rows(model.components[static_cast<std::size_t>(i)], observations);
      }
      break;
    case Emission::kMarginalFirst:
      for (Index i = 0; i < k; ++i) {
        const auto m = gauss::marginal(model.components[static_cast<std::size_t>(i)], model.split.first);
        out.col(i) = gauss::logpdf_rows(m, observations);
      }
      break;
  }
  return out;
}

Matrix forward_variable(const HsmmModel& model, const Matrix& observations, Recursion mode,
                        Emission emission) {
  if (observations.rows() == 0) throw EmptySequence("forward_variable: empty sequence");
  const Matrix log_b = log_emissions(model, observations, emission);
  ForwardFilter filter(model, mode);
  Matrix h(log_b.rows(), model.size());
  for (Index t = 0; t < log_b.rows(); ++t) h.row(t) = filter.step(log_b.row(t).transpose()).transpose();
  return h;
}

Matrix forward_variable(const HsmmModel& model, Index steps, Recursion mode) {
  if (steps <= 0) throw EmptySequence("forward_variable: empty sequence");
  ForwardFilter filter(model, mode);
  const Vector zero = Vector::Zero(model.size());
  Matrix h(steps, model.size());
  for (Index t = 0; t < steps; ++t) h.row(t) = filter.step(zero).transpose();
  return h;
}

HsmmModel init_temporal_split(std::span<const Matrix> demos, const gauss::BlockSplit& split,
                              const HsmmConfig& config) {
  const Index k = config.components;
  if (k < 1) throw InsufficientData("init_temporal_split: need at least one component");
  if (demos.empty()) throw InsufficientData("init_temporal_split: no demos");
  const Index dim = split.dim();
  split.validate(dim);
  double mean_length = 0.0;
  Index max_length = 0;
  for (const auto& d : demos) {
    if (d.cols() != dim) throw DimensionMismatch("init_temporal_split: demo dimension mismatch");
    if (d.rows() < k) {
      throw InsufficientData("init_temporal_split: demo of length " + std::to_string(d.rows()) +
                             " is shorter than " + std::to_string(k) + " components");
    }
    mean_length += static_cast<double>(d.rows());
    max_length = std::max(max_length, d.rows());
  }
  mean_length /= static_cast<double>(demos.size());

  const Slices slices = temporal_slices(demos, k, dim);
  HsmmModel model;
  model.split = split;
  model.duration_std_floor = config.duration_std_floor;
  for (Index i = 0; i < k; ++i) {
    if (slices.count[static_cast<std::size_t>(i)] < 2) {
      throw InsufficientData("init_temporal_split: slice " + std::to_string(i) +
                             " has fewer than two points");
    }
    model.components.push_back(regularized_gaussian(slices.mean[static_cast<std::size_t>(i)],
                                                    slices.covariance[static_cast<std::size_t>(i)]));
  }

  model.initial = Vector::Zero(k);
  if (k == 1) {
    model.initial(0) = 1.0;
  } else {
    model.initial(0) = 1.0 - config.initial_leak;
    model.initial.tail(k - 1).setConstant(config.initial_leak / static_cast<double>(k - 1));
  }

  const double dwell = mean_length / static_cast<double>(k);
  const double leave = std::min(1.0, 1.0 / std::max(dwell, 1.0));
  model.transition = Matrix::Zero(k, k);
  for (Index i = 0; i + 1 < k; ++i) {
    model.transition(i, i) = 1.0 - leave;
    model.transition(i, i + 1) = leave;
  }
  model.transition(k - 1, k - 1) = 1.0;

  const DurationStats init{dwell, std::max(dwell / 2.0, config.duration_std_floor)};
  model.durations.assign(static_cast<std::size_t>(k), init);
  const Index longest_slice = (max_length + k - 1) / k;
  model.max_duration = std::max<Index>(
      1, static_cast<Index>(std::ceil(config.dmax_factor * static_cast<double>(longest_slice))));
  model.validate();
  return model;
}

double log_likelihood(const HsmmModel& model, std::span<const Matrix> demos) {
  double total = 0.0;
  for (const auto& d : demos) {
    total += forward_backward(model, log_emissions(model, d, Emission::kFull)).log_likelihood;
  }
  return total;
}

FitResult fit_em(HsmmModel model, std::span<const Matrix> demos, const HsmmConfig& config) {
  check_demos(model, demos);
  model.duration_std_floor = config.duration_std_floor;
  const Index k = model.size();
  const Index dim = model.dim();
  FitResult result;

  for (int iter = 0; iter < config.max_iters; ++iter) {
    Vector pi_acc = Vector::Zero(k);
    Matrix xi_acc = Matrix::Zero(k, k);
    Vector mass = Vector::Zero(k);
    std::vector<Vector> first(static_cast<std::size_t>(k), Vector::Zero(dim));
    std::vector<Matrix> second(static_cast<std::size_t>(k), Matrix::Zero(dim, dim));
    std::vector<Posterior> posts;
    posts.reserve(demos.size());
    double ll = 0.0;
    for (const auto& d : demos) {
      posts.push_back(forward_backward(model, log_emissions(model, d, Emission::kFull)));
      ll += posts.back().log_likelihood;
    }
    result.log_likelihood.push_back(ll);
    result.iterations = iter;
    if (iter > 0 && ll - result.log_likelihood[static_cast<std::size_t>(iter - 1)] < config.tol) {
      result.converged = true;
      break;
    }

    for (std::size_t n = 0; n < demos.size(); ++n) {
      const auto& post = posts[n];
      pi_acc += post.gamma.row(0).transpose();
      xi_acc += post.xi_sum;
      mass += post.gamma.colwise().sum().transpose();
      for (Index i = 0; i < k; ++i) {
        first[static_cast<std::size_t>(i)].noalias() += demos[n].transpose() * post.gamma.col(i);
      }
    }
    for (Index i = 0; i < k; ++i) {
      if (mass(i) >= config.min_component_mass) first[static_cast<std::size_t>(i)] /= mass(i);
    }
    for (std::size_t n = 0; n < demos.size(); ++n) {
      for (Index i = 0; i < k; ++i) {
        if (mass(i) < config.min_component_mass) continue;
        const Matrix centered = demos[n].rowwise() - first[static_cast<std::size_t>(i)].transpose();
        second[static_cast<std::size_t>(i)].noalias() +=
            centered.transpose() * (centered.array().colwise() * posts[n].gamma.col(i).array()).matrix();
      }
    }

    model.initial = pi_acc / static_cast<double>(demos.size());
    model.initial /= model.initial.sum();
    for (Index i = 0; i < k; ++i) {
      const double row = xi_acc.row(i).sum();
      if (row > 0.0) model.transition.row(i) = xi_acc.row(i) / row;
    }

    std::vector<Index> degenerate;
    for (Index i = 0; i < k; ++i) {
      if (mass(i) < config.min_component_mass) {
        degenerate.push_back(i);
        continue;
      }
      model.components[static_cast<std::size_t>(i)] =
          regularized_gaussian(first[static_cast<std::size_t>(i)],
                               second[static_cast<std::size_t>(i)] / mass(i));
    }
    if (!degenerate.empty()) {
      const Slices slices = temporal_slices(demos, k, dim);
      Index widest = 0;
      for (Index i = 1; i < k; ++i) {
        if (slices.covariance[static_cast<std::size_t>(i)].trace() >
            slices.covariance[static_cast<std::size_t>(widest)].trace()) {
          widest = i;
        }
      }
      for (Index i : degenerate) {
        model.components[static_cast<std::size_t>(i)] = regularized_gaussian(
            slices.mean[static_cast<std::size_t>(widest)],
            slices.covariance[static_cast<std::size_t>(widest)]);
        ++result.reseeded;
      }
    }
  }

  // Dwell statistics along the most likely state path of every demo.
  std::vector<std::vector<double>> dwell(static_cast<std::size_t>(k));
  Index longest = 1;
  for (const auto& d : demos) {
    const auto path = viterbi(model, log_emissions(model, d, Emission::kFull));
    Index run = 1;
    for (std::size_t t = 1; t <= path.size(); ++t) {
      if (t < path.size() && path[t] == path[t - 1]) {
        ++run;
        continue;
      }
      dwell[static_cast<std::size_t>(path[t - 1])].push_back(static_cast<double>(run));
      longest = std::max(longest, run);
      run = 1;
    }
  }
  for (Index i = 0; i < k; ++i) {
    const auto& runs = dwell[static_cast<std::size_t>(i)];
    if (runs.empty()) continue;
    double mean = 0.0;
    for (double r : runs) mean += r;
    mean /= static_cast<double>(runs.size());
    double var = 0.0;
    for (double r : runs) var += (r - mean) * (r - mean);
    var /= static_cast<double>(runs.size());
    model.durations[static_cast<std::size_t>(i)] = {mean,
                                                     std::max(std::sqrt(var), config.duration_std_floor)};
  }
  for (auto& d : model.durations) d.std = std::max(d.std, config.duration_std_floor);
  model.max_duration = std::max<Index>(
      1, static_cast<Index>(std::ceil(config.dmax_factor * static_cast<double>(longest))));
  model.validate();
  result.model = std::move(model);
  return result;
}

std::vector<std::pair<gauss::MultivariateGaussian, gauss::MultivariateGaussian>>
component_marginals(const HsmmModel& model) {
  std::vector<std::pair<gauss::MultivariateGaussian, gauss::MultivariateGaussian>> out;
  out.reserve(model.components.size());
  for (const auto& c : model.components) {
    out.emplace_back(gauss::marginal(c, model.split.first), gauss::marginal(c, model.split.second));
  }
  return out;
}

std::vector<Index> prior_schedule(const HsmmModel& model, Index steps) {
  const Matrix h = forward_variable(model, steps, Recursion::kHsmm);
  std::vector<Index> out(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) out[static_cast<std::size_t>(t)] = argmax_lowest(h.row(t).transpose());
  return out;
}

PriorLookup prior_component(const HsmmModel& model, Index t) {
  if (t < 0) throw Error("prior_component: negative time step");
  const Matrix h = forward_variable(model, t + 1, Recursion::kHsmm);
  const Index best = argmax_lowest(h.row(t).transpose());
  const auto& c = model.components[static_cast<std::size_t>(best)];
  return {best, gauss::marginal(c, model.split.first), gauss::marginal(c, model.split.second)};
}

GmrConditioner::GmrConditioner(const HsmmModel& model) : filter_(model, Recursion::kHsmm) {
  for (const auto& c : model.components) {
    first_marginals_.push_back(gauss::marginal(c, model.split.first));
    maps_.push_back(gauss::conditional_map(c, model.split));
  }
}

GmrConditioner::Step GmrConditioner::push(const Vector& observed_first) {
  const Index k = static_cast<Index>(maps_.size());
  if (observed_first.size() != maps_.front().first_mean.size()) {
    throw DimensionMismatch("gmr_condition: observation has " +
                            std::to_string(observed_first.size()) + " dims, expected " +
                            std::to_string(maps_.front().first_mean.size()));
  }
  Vector log_b(k);
  for (Index i = 0; i < k; ++i) {
    log_b(i) = gauss::logpdf(first_marginals_[static_cast<std::size_t>(i)], observed_first);
  }
  Vector w = filter_.step(log_b);
  for (Index i = 0; i < k; ++i) {
    if (w(i) < kResponsibilityClamp) w(i) = 0.0;
  }
  w /= w.sum();

  const Index d2 = maps_.front().second_mean.size();
  Step out;
  out.weights = w;
  out.mean = Vector::Zero(d2);
  std::vector<Vector> means(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    if (w(i) == 0.0) continue;
    means[static_cast<std::size_t>(i)] = maps_[static_cast<std::size_t>(i)].mean_at(observed_first);
    out.mean += w(i) * means[static_cast<std::size_t>(i)];
  }
  // Moment-matched covariance: weighted conditional covariances plus spread.
  out.covariance = Matrix::Zero(d2, d2);
  for (Index i = 0; i < k; ++i) {
    if (w(i) == 0.0) continue;
    const auto& l = maps_[static_cast<std::size_t>(i)].conditional_chol;
    const Vector d = means[static_cast<std::size_t>(i)] - out.mean;
    out.covariance.noalias() += w(i) * (l * l.transpose() + d * d.transpose());
  }
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

GmrResult gmr_condition(const HsmmModel& model, const Matrix& first_sequence) {
  if (first_sequence.cols() != static_cast<Index>(model.split.first.size())) {
    throw DimensionMismatch("gmr_condition: sequence has " + std::to_string(first_sequence.cols()) +
                            " columns, expected " + std::to_string(model.split.first.size()));
  }
  GmrConditioner cond(model);
  GmrResult out;
  const Index steps = first_sequence.rows();
  out.weights.resize(steps, model.size());
  out.mean.resize(steps, static_cast<Index>(model.split.second.size()));
  out.covariance.reserve(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) {
    auto s = cond.push(first_sequence.row(t).transpose());
    out.weights.row(t) = s.weights.transpose();
    out.mean.row(t) = s.mean.transpose();
    out.covariance.push_back(std::move(s.covariance));
  }
  return out;
}

}  // namespace mild::hsmm
