#include "mild/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>

#include "mild/errors.hpp"

namespace mild::pipeline {

namespace {

using gauss::MultivariateGaussian;

struct ClassPriors {
  std::vector<Index> schedule;
  std::vector<std::pair<MultivariateGaussian, MultivariateGaussian>> marginals;
};

std::map<std::string, ClassPriors> build_priors(const std::map<std::string, hsmm::HsmmModel>& hsmms,
                                                const std::map<std::string, Index>& longest) {
  std::map<std::string, ClassPriors> out;
  for (const auto& [label, model] : hsmms) {
    ClassPriors p;
    p.schedule = hsmm::prior_schedule(model, longest.at(label));
    p.marginals = hsmm::component_marginals(model);
    out.emplace(label, std::move(p));
  }
  return out;
}

// Per-row priors for one demo; standard normal before the first refit.
std::pair<std::vector<MultivariateGaussian>, std::vector<MultivariateGaussian>> demo_priors(
    const std::map<std::string, ClassPriors>& priors, const std::string& label, Index start,
    Index rows, Index latent) {
  std::vector<MultivariateGaussian> p1;
  std::vector<MultivariateGaussian> p2;
  const auto it = priors.find(label);
  if (it == priors.end()) {
    p1.push_back(MultivariateGaussian::standard(latent));
    p2.push_back(MultivariateGaussian::standard(latent));
    return {p1, p2};
  }
  p1.reserve(static_cast<std::size_t>(rows));
  p2.reserve(static_cast<std::size_t>(rows));
  for (Index t = 0; t < rows; ++t) {
    const Index k = it->second.schedule[static_cast<std::size_t>(start + t)];
    const auto& m = it->second.marginals[static_cast<std::size_t>(k)];
    p1.push_back(m.first);
    p2.push_back(m.second);
  }
  return {p1, p2};
}

std::vector<std::span<const double>> summed_blocks(const vae::VaeGradients& a,
                                                   const vae::VaeGradients& b,
                                                   std::vector<std::vector<double>>& storage) {
  const auto ga = vae::gradient_blocks(a);
  const auto gb = vae::gradient_blocks(b);
  storage.assign(ga.size(), {});
  std::vector<std::span<const double>> out;
  for (std::size_t i = 0; i < ga.size(); ++i) {
    storage[i].resize(ga[i].size());
    for (std::size_t j = 0; j < ga[i].size(); ++j) storage[i][j] = ga[i][j] + gb[i][j];
    out.emplace_back(storage[i]);
  }
  return out;
}

void check_finite(double v, int epoch, const char* what) {
  if (!std::isfinite(v)) {
    throw NonFiniteLoss(std::string("non-finite ") + what + " in epoch " + std::to_string(epoch),
                        epoch);
  }
}

// A NaN or overflow upstream of the loss surfaces as an invalid posterior
// Gaussian; report it as a non-finite loss when the cause is non-finite.
vae::ElboResult guarded_loss(const vae::VaeAgent& agent, const Matrix& x,
                             std::span<const gauss::MultivariateGaussian> priors,
                             const TrainConfig& config, numkit::Rng& rng, int epoch, const char* who) {
  try {
    return agent.elbo_loss(x, priors, config.n_samples, config.kl_scale, rng);
  } catch (const Error&) {
    if (!x.allFinite() || !agent.all_finite() || !agent.encode_mean(x).allFinite()) {
      throw NonFiniteLoss(std::string("non-finite ") + who + " loss in epoch " + std::to_string(epoch),
                          epoch);
    }
    throw;
  }
}

// Validation demos: round(fraction * n) per class, at least one when the class
// has two or more demos, never the last remaining training demo.
std::vector<bool> validation_mask(std::span<const dataio::WindowedDemo> demos, double fraction,
                                  numkit::Rng& rng) {
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < demos.size(); ++i) by_class[demos[i].label].push_back(i);
  std::vector<bool> mask(demos.size(), false);
  for (auto& [label, idx] : by_class) {
    const auto n = idx.size();
    if (n < 2) continue;
    auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    take = std::clamp<std::size_t>(take, 1, n - 1);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    for (std::size_t i = 0; i < take; ++i) mask[idx[i]] = true;
  }
  return mask;
}

const hsmm::HsmmModel& class_model(const TrainedModel& model, const std::string& label) {
  const auto it = model.hsmms.find(label);
  if (it == model.hsmms.end()) {
    std::string known;
    for (const auto& [l, m] : model.hsmms) known += (known.empty() ? "" : ", ") + l;
    throw UnknownClass("unknown class '" + label + "'; known classes: " + known);
  }
  return it->second;
}

}  // namespace

std::vector<dataio::WindowedDemo> window_dataset(std::span<const dataio::RawDemo> demos,
                                                 Index window) {
  std::vector<dataio::WindowedDemo> out;
  out.reserve(demos.size());
  for (const auto& d : demos) out.push_back(dataio::window_stack(d, window));
  return out;
}

std::vector<Matrix> encode_joint(const VaePair& vae, std::span<const dataio::WindowedDemo> demos,
                                 numkit::Rng* sample_rng) {
  std::vector<Matrix> out;
  out.reserve(demos.size());
  const Index l1 = vae.agent1.latent_dim();
  const Index l2 = vae.agent2.latent_dim();
  for (const auto& d : demos) {
    Matrix z(d.agent1.rows(), l1 + l2);
    if (sample_rng == nullptr) {
      z.leftCols(l1) = vae.agent1.encode_mean(d.agent1);
      z.rightCols(l2) = vae.agent2.encode_mean(d.agent2);
    } else {
      const auto q1 = vae.agent1.encode(d.agent1);
      const auto q2 = vae.agent2.encode(d.agent2);
      for (Index t = 0; t < z.rows(); ++t) {
        z.row(t).head(l1) = vae::sample_posterior(q1[static_cast<std::size_t>(t)], 1, *sample_rng);
        z.row(t).tail(l2) = vae::sample_posterior(q2[static_cast<std::size_t>(t)], 1, *sample_rng);
      }
    }
    out.push_back(std::move(z));
  }
  return out;
}

std::map<std::string, hsmm::HsmmModel> refit_hsmms(
    const VaePair& vae, std::span<const dataio::WindowedDemo> demos, const TrainConfig& config,
    const std::map<std::string, hsmm::HsmmModel>* previous,
    std::map<std::string, double>* log_likelihood, numkit::Rng* sample_rng) {
  const auto joint = encode_joint(vae, demos, config.sampled_refit ? sample_rng : nullptr);
  std::map<std::string, std::vector<Matrix>> by_class;
  for (std::size_t i = 0; i < demos.size(); ++i) by_class[demos[i].label].push_back(joint[i]);

  const auto split = gauss::BlockSplit::contiguous(vae.agent1.latent_dim(), vae.agent2.latent_dim());
  std::map<std::string, hsmm::HsmmModel> out;
  for (const auto& [label, seqs] : by_class) {
    hsmm::HsmmModel init;
    const hsmm::HsmmModel* prev = nullptr;
    if (config.warm_start && previous != nullptr) {
      if (const auto it = previous->find(label); it != previous->end()) prev = &it->second;
    }
    init = prev != nullptr ? *prev : hsmm::init_temporal_split(seqs, split, config.hsmm);
    auto fit = hsmm::fit_em(std::move(init), seqs, config.hsmm);
    if (log_likelihood != nullptr) {
      (*log_likelihood)[label] = hsmm::log_likelihood(fit.model, seqs);
    }
    out.emplace(label, std::move(fit.model));
  }
  return out;
}

TrainResult train(std::span<const dataio::WindowedDemo> demos, const TrainConfig& config,
                  const TrainHooks& hooks, WarmStart warm) {
  if (demos.empty()) throw EmptyDataset("train: no demos");
  if (config.epochs < 1) throw Error("train: epochs must be at least 1");
  const Index d1 = demos.front().agent1.cols();
  const Index d2 = demos.front().agent2.cols();
  for (const auto& d : demos) {
    if (d.agent1.rows() != d.agent2.rows()) {
      throw DimensionMismatch("train: demo '" + d.label + "' has unequal agent lengths");
    }
    if (d.agent1.rows() == 0) throw EmptySequence("train: empty demo");
    if (d.agent1.cols() != d1 || d.agent2.cols() != d2) {
      throw DimensionMismatch("train: window dimensions differ across demos");
    }
    if (d.label.empty()) throw EmptyClass("train: demo without a class label");
  }
  if (config.share_weights && d1 != d2) {
    throw DimensionMismatch("train: shared weights need equal agent window dimensions");
  }

  numkit::Rng master(config.seed);
  numkit::Rng init_rng = master.split();
  numkit::Rng shuffle_rng = master.split();
  numkit::Rng noise_rng = master.split();
  numkit::Rng split_rng = master.split();
  numkit::Rng refit_rng = master.split();
  const std::uint64_t validation_seed = master.next_u64();

  std::vector<bool> is_val(demos.size(), false);
  if (config.early_stopping) is_val = validation_mask(demos, config.validation_fraction, split_rng);
  std::vector<dataio::WindowedDemo> train_set;
  std::vector<dataio::WindowedDemo> val_set;
  for (std::size_t i = 0; i < demos.size(); ++i) (is_val[i] ? val_set : train_set).push_back(demos[i]);

  std::map<std::string, Index> longest;
  for (const auto& d : demos) longest[d.label] = std::max(longest[d.label], d.agent1.rows());
  std::set<std::string> train_labels;
  for (const auto& d : train_set) train_labels.insert(d.label);
  for (const auto& [label, n] : longest) {
    if (train_labels.count(label) == 0) throw EmptyClass("train: class '" + label + "' has no training demos");
  }

  TrainedModel model;
  model.config = config;
  vae::VaeConfig c1{d1, config.latent_dim, config.hidden, config.leaky_slope};
  model.vae.agent1 = vae::VaeAgent::create(c1, init_rng);
  if (config.share_weights) {
    model.vae.agent2 = model.vae.agent1;
  } else {
    vae::VaeConfig c2{d2, config.latent_dim, config.hidden, config.leaky_slope};
    model.vae.agent2 = vae::VaeAgent::create(c2, init_rng);
  }
  if (warm.source != nullptr) {
    model.vae.agent1.transfer_matching_layers(*warm.source);
    model.vae.agent2.transfer_matching_layers(*warm.source);
  }

  nnet::OptimizerState opt1(config.optimizer);
  nnet::OptimizerState opt2(config.optimizer);
  const auto clock = hooks.clock ? hooks.clock : [start = std::chrono::steady_clock::now()] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  TrainResult result;
  std::map<std::string, ClassPriors> priors;
  // (demo, first window, window count) of every gradient step.
  struct Batch {
    std::size_t demo;
    Index start;
    Index rows;
  };
  std::vector<Batch> order;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const Index n = train_set[i].agent1.rows();
    const Index step = config.batch_size > 0 ? config.batch_size : n;
    for (Index s = 0; s < n; s += step) order.push_back({i, s, std::min(step, n - s)});
  }

  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  TrainedModel best;
  std::vector<std::vector<double>> shared_storage;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    std::map<std::string, double> recon;
    std::map<std::string, double> kl;
    std::map<std::string, int> batches;
    for (const auto& batch : order) {
      const auto& demo = train_set[batch.demo];
      const auto [p1, p2] =
          demo_priors(priors, demo.label, batch.start, batch.rows, config.latent_dim);
      if (hooks.on_step) hooks.on_step(epoch, model.hsmms);

      const Matrix x1 = demo.agent1.middleRows(batch.start, batch.rows);
      const Matrix x2 = demo.agent2.middleRows(batch.start, batch.rows);
      const auto& net2 = config.share_weights ? model.vae.agent1 : model.vae.agent2;
      const auto r1 = guarded_loss(model.vae.agent1, x1, p1, config, noise_rng, epoch, "agent-1");
      const auto r2 = guarded_loss(net2, x2, p2, config, noise_rng, epoch, "agent-2");
      check_finite(r1.loss, epoch, "agent-1 loss");
      check_finite(r2.loss, epoch, "agent-2 loss");

      if (config.share_weights) {
        auto params = model.vae.agent1.parameters();
        const auto grads = summed_blocks(r1.gradients, r2.gradients, shared_storage);
        nnet::adamw_step(params, grads, opt1);
        model.vae.agent2 = model.vae.agent1;
      } else {
        auto params1 = model.vae.agent1.parameters();
        nnet::adamw_step(params1, vae::gradient_blocks(r1.gradients), opt1);
        auto params2 = model.vae.agent2.parameters();
        nnet::adamw_step(params2, vae::gradient_blocks(r2.gradients), opt2);
      }
      recon[demo.label] += r1.reconstruction + r2.reconstruction;
      kl[demo.label] += r1.kl + r2.kl;
      ++batches[demo.label];
    }
    if (!model.vae.agent1.all_finite() || !model.vae.agent2.all_finite()) {
      throw NonFiniteLoss("non-finite network parameters after epoch " + std::to_string(epoch), epoch);
    }

    std::map<std::string, double> ll;
    model.hsmms = refit_hsmms(model.vae, train_set, config, &model.hsmms, &ll, &refit_rng);
    priors = build_priors(model.hsmms, longest);

    double val_loss = std::numeric_limits<double>::quiet_NaN();
    if (config.early_stopping && !val_set.empty()) {
      numkit::Rng val_rng(validation_seed);
      double total = 0.0;
      for (const auto& demo : val_set) {
        const auto [p1, p2] = demo_priors(priors, demo.label, 0, demo.agent1.rows(), config.latent_dim);
        total += guarded_loss(model.vae.agent1, demo.agent1, p1, config, val_rng, epoch, "validation agent-1").loss;
        total += guarded_loss(model.vae.agent2, demo.agent2, p2, config, val_rng, epoch, "validation agent-2").loss;
      }
      val_loss = total / static_cast<double>(val_set.size());
      check_finite(val_loss, epoch, "validation loss");
    }

    const double now = clock();
    for (const auto& [label, n] : batches) {
      TrainRecord rec;
      rec.epoch = epoch;
      rec.label = label;
      rec.reconstruction = recon[label] / n;
      rec.kl = kl[label] / n;
      rec.hsmm_log_likelihood = ll.at(label);
      rec.validation_loss = val_loss;
      rec.wall_seconds = now;
      result.log.records.push_back(std::move(rec));
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model);

    if (config.early_stopping && !val_set.empty()) {
      if (val_loss < best_val) {
        best_val = val_loss;
        best_epoch = epoch;
        best = model;
      } else if (epoch - best_epoch >= config.patience) {
        result.log.stopped_early = true;
        break;
      }
    }
  }

  if (best_epoch >= 0) {
    result.model = std::move(best);
    result.log.selected_epoch = best_epoch;
  } else {
    result.model = std::move(model);
    result.log.selected_epoch = result.log.records.empty() ? -1 : result.log.records.back().epoch;
  }
  return result;
}

OnlineConditioner::OnlineConditioner(const TrainedModel& model, const std::string& label)
    : model_(&model), gmr_(class_model(model, label)) {}

Vector OnlineConditioner::push(const Vector& agent1_window) {
  const auto& vae = model_->vae;
  if (agent1_window.size() != vae.agent1.input_dim()) {
    throw DimensionMismatch("condition: window has " + std::to_string(agent1_window.size()) +
                            " values, the agent-1 encoder expects " +
                            std::to_string(vae.agent1.input_dim()));
  }
  const Matrix z1 = vae.agent1.encode_mean(agent1_window.transpose());
  const auto step = gmr_.push(z1.row(0).transpose());
  return vae.agent2.decode(step.mean.transpose()).row(0).transpose();
}

Matrix condition(const TrainedModel& model, const std::string& label, const Matrix& agent1_windows) {
  OnlineConditioner cond(model, label);
  Matrix out(agent1_windows.rows(), model.vae.agent2.input_dim());
  for (Index t = 0; t < agent1_windows.rows(); ++t) {
    out.row(t) = cond.push(agent1_windows.row(t).transpose()).transpose();
  }
  return out;
}

}  // namespace mild::pipeline
