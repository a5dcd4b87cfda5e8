#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mild/dataio.hpp"
#include "mild/hsmm.hpp"
#include "mild/nnet.hpp"
#include "mild/vae.hpp"

namespace mild::pipeline {

using numkit::Index;
using numkit::Matrix;
using numkit::Vector;

/// Full hyperparameter record. Together with the dataset it determines a
/// training run bit-for-bit.
struct TrainConfig {
  Index latent_dim = 5;
  std::vector<Index> hidden = {250, 150};
  double leaky_slope = nnet::kDefaultLeakySlope;
  Index window = 40;
  double kl_scale = 1e-3;
  Index n_samples = 10;
  /// Windows per gradient step, taken as consecutive chunks of one demo.
  /// Zero uses every window of the demo.
  Index batch_size = 0;
  nnet::AdamWConfig optimizer;
  int epochs = 100;
  std::uint64_t seed = 7;

  hsmm::HsmmConfig hsmm;
  /// Refit each epoch from the previous epoch's HSMM instead of a fresh
  /// temporal-split init.
  bool warm_start = false;
  /// Refit on posterior samples instead of posterior means.
  bool sampled_refit = false;
  /// One VAE for both agents (requires equal window dimensions).
  bool share_weights = false;

  bool early_stopping = false;
  double validation_fraction = 0.1;
  int patience = 20;

  /// Written into the checkpoint header. Zero keeps checkpoints reproducible.
  std::int64_t timestamp = 0;
};

struct VaePair {
  vae::VaeAgent agent1;
  vae::VaeAgent agent2;
};

struct TrainedModel {
  VaePair vae;
  std::map<std::string, hsmm::HsmmModel> hsmms;
  TrainConfig config;
};

/// One record per epoch per class.
struct TrainRecord {
  int epoch = 0;
  std::string label;
  /// Reconstruction and unscaled KL terms summed over both agents, averaged
  /// over the class's training batches.
  double reconstruction = 0.0;
  double kl = 0.0;
  double hsmm_log_likelihood = 0.0;
  /// Total validation loss of the epoch (NaN when early stopping is off).
  double validation_loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  /// Epoch whose parameters were returned.
  int selected_epoch = -1;
  bool stopped_early = false;
};

struct TrainResult {
  TrainedModel model;
  TrainLog log;
};

/// Optional observers. `on_step` runs before every gradient step with the
/// HSMMs the step's priors come from; `clock` supplies wall-clock seconds.
struct TrainHooks {
  std::function<void(int epoch, const std::map<std::string, hsmm::HsmmModel>&)> on_step;
  std::function<void(int epoch, const TrainedModel&)> on_epoch_end;
  std::function<double()> clock;
};

/// Layers of this network are copied into both agents' VAEs wherever shapes
/// match before training starts.
struct WarmStart {
  const vae::VaeAgent* source = nullptr;
};

std::vector<dataio::WindowedDemo> window_dataset(std::span<const dataio::RawDemo> demos,
                                                 Index window);

TrainResult train(std::span<const dataio::WindowedDemo> demos, const TrainConfig& config,
                  const TrainHooks& hooks = {}, WarmStart warm = {});

/// Joint latent sequences [z1, z2] for every demo. Posterior means unless
/// `sample_rng` is given, in which case one posterior draw per window.
std::vector<Matrix> encode_joint(const VaePair& vae, std::span<const dataio::WindowedDemo> demos,
                                 numkit::Rng* sample_rng = nullptr);

/// Per-class HSMM fit on the joint encodings. `previous` seeds EM when
/// config.warm_start is set; `sample_rng` is used when config.sampled_refit is.
std::map<std::string, hsmm::HsmmModel> refit_hsmms(
    const VaePair& vae, std::span<const dataio::WindowedDemo> demos, const TrainConfig& config,
    const std::map<std::string, hsmm::HsmmModel>* previous = nullptr,
    std::map<std::string, double>* log_likelihood = nullptr, numkit::Rng* sample_rng = nullptr);

/// Predicted agent-2 windows for observed agent-1 windows of class `label`.
/// Row t depends only on rows 0..t of the input.
Matrix condition(const TrainedModel& model, const std::string& label, const Matrix& agent1_windows);

/// Streaming form of condition(): one predicted window per pushed window.
class OnlineConditioner {
 public:
  OnlineConditioner(const TrainedModel& model, const std::string& label);

  Vector push(const Vector& agent1_window);
  Index time() const { return gmr_.time(); }

 private:
  const TrainedModel* model_;
  hsmm::GmrConditioner gmr_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize(const TrainedModel& model);
TrainedModel deserialize(std::span<const std::uint8_t> bytes);

/// CRC-32 of the serialized config block stored in the checkpoint header.
std::uint32_t config_hash(const TrainConfig& config);

struct CheckpointHeader {
  std::uint32_t version = 0;
  std::uint32_t config_hash = 0;
  std::int64_t timestamp = 0;
};

CheckpointHeader read_header(const std::filesystem::path& path);

}  // namespace mild::pipeline
