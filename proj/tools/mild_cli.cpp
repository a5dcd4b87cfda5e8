// mild: train, condition, evaluate and inspect interaction models.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mild/dataio.hpp"
#include "mild/errors.hpp"
#include "mild/eval.hpp"
#include "mild/pipeline.hpp"

namespace {

using mild::numkit::Index;
using mild::numkit::Matrix;
using mild::numkit::Vector;
using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<Index> parse_index_list(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    Index v = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw UsageError("expected a comma-separated list of integers, got '" + s + "'");
    }
    out.push_back(v);
  }
  return out;
}

json config_to_json(const mild::pipeline::TrainConfig& c) {
  return json{{"latent_dim", c.latent_dim},
              {"hidden", c.hidden},
              {"leaky_slope", c.leaky_slope},
              {"window", c.window},
              {"kl_scale", c.kl_scale},
              {"samples", c.n_samples},
              {"batch_size", c.batch_size},
              {"lr", c.optimizer.learning_rate},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2},
              {"adam_eps", c.optimizer.epsilon},
              {"weight_decay", c.optimizer.weight_decay},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"components", c.hsmm.components},
              {"hsmm_max_iters", c.hsmm.max_iters},
              {"hsmm_tol", c.hsmm.tol},
              {"duration_std_floor", c.hsmm.duration_std_floor},
              {"dmax_factor", c.hsmm.dmax_factor},
              {"warm_start", c.warm_start},
              {"sampled_refit", c.sampled_refit},
              {"share_weights", c.share_weights},
              {"early_stopping", c.early_stopping},
              {"val_fraction", c.validation_fraction},
              {"patience", c.patience},
              {"timestamp", c.timestamp}};
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void apply_config_file(const std::string& path, mild::pipeline::TrainConfig& c) {
  std::ifstream in(path);
  if (!in) throw mild::IoFailure("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
    take(j, "latent_dim", c.latent_dim);
    take(j, "hidden", c.hidden);
    take(j, "leaky_slope", c.leaky_slope);
    take(j, "window", c.window);
    take(j, "kl_scale", c.kl_scale);
    take(j, "samples", c.n_samples);
    take(j, "batch_size", c.batch_size);
    take(j, "lr", c.optimizer.learning_rate);
    take(j, "beta1", c.optimizer.beta1);
    take(j, "beta2", c.optimizer.beta2);
    take(j, "adam_eps", c.optimizer.epsilon);
    take(j, "weight_decay", c.optimizer.weight_decay);
    take(j, "epochs", c.epochs);
    take(j, "seed", c.seed);
    take(j, "components", c.hsmm.components);
    take(j, "hsmm_max_iters", c.hsmm.max_iters);
    take(j, "hsmm_tol", c.hsmm.tol);
    take(j, "duration_std_floor", c.hsmm.duration_std_floor);
    take(j, "dmax_factor", c.hsmm.dmax_factor);
    take(j, "warm_start", c.warm_start);
    take(j, "sampled_refit", c.sampled_refit);
    take(j, "share_weights", c.share_weights);
    take(j, "early_stopping", c.early_stopping);
    take(j, "val_fraction", c.validation_fraction);
    take(j, "patience", c.patience);
    take(j, "timestamp", c.timestamp);
  } catch (const json::exception& e) {
    throw mild::ParseError("config '" + path + "': " + e.what(), 0);
  }
}

struct Preprocess {
  std::string origin1;
  std::string origin2;
  Index smooth = 1;

  void add(CLI::App* app) {
    app->add_option("--origin-agent1", origin1,
                    "Comma-separated agent-1 reference columns subtracted from every group");
    app->add_option("--origin-agent2", origin2, "Same for agent 2");
    app->add_option("--smooth", smooth, "Centered moving-average window applied to raw frames (odd)")
        ->check(CLI::PositiveNumber);
  }

  std::vector<mild::dataio::RawDemo> load(const std::string& path) const {
    mild::dataio::SchemaConfig schema;
    schema.origin.agent1_reference = parse_index_list(origin1);
    schema.origin.agent2_reference = parse_index_list(origin2);
    auto ds = mild::dataio::load_dataset(path, schema);
    if (smooth > 1) {
      for (auto& d : ds.demos) {
        d.agent1 = mild::dataio::moving_average(d.agent1, smooth);
        d.agent2 = mild::dataio::moving_average(d.agent2, smooth);
      }
    }
    return std::move(ds.demos);
  }
};

void write_matrix_csv(std::ostream& out, const Matrix& m, const std::string& prefix) {
  out << "t";
  for (Index c = 0; c < m.cols(); ++c) out << ',' << prefix << c << "[input]";
  out << '\n';
  for (Index t = 0; t < m.rows(); ++t) {
    out << t;
    for (Index c = 0; c < m.cols(); ++c) out << ',' << num(m(t, c));
    out << '\n';
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw mild::IoFailure("cannot write '" + path + "'");
  return out;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string out = "model.ckpt";
  std::string log = "train_log.csv";
  std::string config;
  std::string init_from;
  std::string hidden;
  Index classes = 0;
  bool no_wall_clock = false;
  mild::pipeline::TrainConfig cfg;
  Preprocess pre;
};

void add_train(CLI::App& app, TrainArgs& a, CLI::App*& cmd) {
  cmd = app.add_subcommand("train", "Train VAEs and per-class HSMMs");
  auto& c = a.cfg;
  cmd->add_option("--data", a.data, "Training dataset")->required();
  cmd->add_option("--out", a.out, "Checkpoint path")->capture_default_str();
  cmd->add_option("--log", a.log, "Training log CSV")->capture_default_str();
  cmd->add_option("--config", a.config, "JSON config file; flags take precedence");
  cmd->add_option("--classes", a.classes, "Expected number of classes in the dataset");
  cmd->add_option("--components", c.hsmm.components, "HSMM components per class")->capture_default_str();
  cmd->add_option("--latent-dim", c.latent_dim, "Latent dimension per agent")->capture_default_str();
  cmd->add_option("--window", c.window, "Frames per window")->capture_default_str();
  cmd->add_option("--kl-scale", c.kl_scale, "KL term weight")->capture_default_str();
  cmd->add_option("--samples", c.n_samples, "Posterior samples per window")->capture_default_str();
  cmd->add_option("--batch-size", c.batch_size, "Windows per step (0: whole demo)")->capture_default_str();
  cmd->add_option("--lr", c.optimizer.learning_rate, "AdamW learning rate")->capture_default_str();
  cmd->add_option("--weight-decay", c.optimizer.weight_decay, "AdamW weight decay")->capture_default_str();
  cmd->add_option("--epochs", c.epochs, "Epoch budget")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--hidden", a.hidden, "Hidden widths, e.g. 250,150");
  cmd->add_option("--hsmm-iters", c.hsmm.max_iters, "EM iteration cap")->capture_default_str();
  cmd->add_flag("--warm-start", c.warm_start, "Refit HSMMs from the previous epoch's parameters");
  cmd->add_flag("--sampled-refit", c.sampled_refit, "Refit HSMMs on posterior samples");
  cmd->add_flag("--share-weights", c.share_weights, "One VAE for both agents");
  cmd->add_flag("--early-stopping", c.early_stopping, "Hold out demos and stop on validation loss");
  cmd->add_option("--val-fraction", c.validation_fraction, "Held-out fraction per class")->capture_default_str();
  cmd->add_option("--patience", c.patience, "Epochs without improvement before stopping")->capture_default_str();
  cmd->add_option("--init-from", a.init_from, "Checkpoint whose agent-1 layers seed both VAEs");
  cmd->add_option("--timestamp", c.timestamp, "Creation time written to the checkpoint header")->capture_default_str();
  cmd->add_flag("--no-wall-clock", a.no_wall_clock, "Write zero wall-clock times to the log");
  a.pre.add(cmd);
}

int run_train(CLI::App* cmd, TrainArgs& a) {
  // Defaults, then the config file, then explicitly given flags.
  mild::pipeline::TrainConfig cfg;
  if (!a.config.empty()) apply_config_file(a.config, cfg);
  auto given = [&](const char* name) { return cmd->count(name) > 0; };
  const auto& f = a.cfg;
  if (given("--components")) cfg.hsmm.components = f.hsmm.components;
  if (given("--latent-dim")) cfg.latent_dim = f.latent_dim;
  if (given("--window")) cfg.window = f.window;
  if (given("--kl-scale")) cfg.kl_scale = f.kl_scale;
  if (given("--samples")) cfg.n_samples = f.n_samples;
  if (given("--batch-size")) cfg.batch_size = f.batch_size;
  if (given("--lr")) cfg.optimizer.learning_rate = f.optimizer.learning_rate;
  if (given("--weight-decay")) cfg.optimizer.weight_decay = f.optimizer.weight_decay;
  if (given("--epochs")) cfg.epochs = f.epochs;
  if (given("--seed")) cfg.seed = f.seed;
  if (given("--hidden")) cfg.hidden = parse_index_list(a.hidden);
  if (given("--hsmm-iters")) cfg.hsmm.max_iters = f.hsmm.max_iters;
  if (given("--warm-start")) cfg.warm_start = true;
  if (given("--sampled-refit")) cfg.sampled_refit = true;
  if (given("--share-weights")) cfg.share_weights = true;
  if (given("--early-stopping")) cfg.early_stopping = true;
  if (given("--val-fraction")) cfg.validation_fraction = f.validation_fraction;
  if (given("--patience")) cfg.patience = f.patience;
  if (given("--timestamp")) cfg.timestamp = f.timestamp;
  if (cfg.hidden.empty()) throw UsageError("--hidden needs at least one width");

  const auto raw = a.pre.load(a.data);
  const auto hist = mild::dataio::class_histogram(raw);
  if (a.classes > 0 && static_cast<Index>(hist.size()) != a.classes) {
    throw mild::EmptyClass("expected " + std::to_string(a.classes) + " classes, dataset has " +
                           std::to_string(hist.size()));
  }
  const auto windows = mild::pipeline::window_dataset(raw, cfg.window);

  mild::pipeline::TrainHooks hooks;
  if (a.no_wall_clock) hooks.clock = [] { return 0.0; };
  mild::pipeline::TrainedModel source;
  mild::pipeline::WarmStart warm;
  if (!a.init_from.empty()) {
    source = mild::pipeline::load(a.init_from);
    warm.source = &source.vae.agent1;
  }
  const auto result = mild::pipeline::train(windows, cfg, hooks, warm);
  mild::pipeline::save(result.model, a.out);

  auto log = open_out(a.log);
  log << "epoch,class,reconstruction[squared input],kl[nats],hsmm_log_likelihood[nats],"
         "validation_loss,wall_seconds[s]\n";
  for (const auto& r : result.log.records) {
    log << r.epoch << ',' << r.label << ',' << num(r.reconstruction) << ',' << num(r.kl) << ','
        << num(r.hsmm_log_likelihood) << ',' << num(r.validation_loss) << ',' << num(r.wall_seconds)
        << '\n';
  }
  std::cout << "trained " << result.model.hsmms.size() << " classes, "
            << (result.log.records.empty() ? 0 : result.log.records.back().epoch + 1)
            << " epochs (selected epoch " << result.log.selected_epoch << ")\n"
            << "checkpoint: " << a.out << "\nlog: " << a.log << '\n';
  return 0;
}

// ------------------------------------------------------------ condition

struct ConditionArgs {
  std::string model;
  std::string label;
  std::string input;
  std::string data;
  Index demo = -1;
  std::string out = "prediction_windows.csv";
  std::string frames_out = "prediction_frames.csv";
  bool stream = false;
  Preprocess pre;
};

void add_condition(CLI::App& app, ConditionArgs& a, CLI::App*& cmd) {
  cmd = app.add_subcommand("condition", "Predict agent 2 from observed agent-1 frames");
  cmd->add_option("--model", a.model, "Checkpoint")->required();
  cmd->add_option("--class", a.label, "Interaction class")->required();
  auto* in = cmd->add_option("--input", a.input, "Agent-1 frames, one per line ('-' for stdin)");
  auto* data = cmd->add_option("--data", a.data, "Dataset file; conditions on one of its demos");
  cmd->add_option("--demo", a.demo, "Demo index within --data")->needs(data);
  in->excludes(data);
  cmd->add_option("--out", a.out, "Predicted windows CSV")->capture_default_str();
  cmd->add_option("--frames-out", a.frames_out, "First-frame trajectory CSV")->capture_default_str();
  cmd->add_flag("--stream", a.stream,
                "Read frames from --input and print each prediction as soon as its window completes");
  a.pre.add(cmd);
}

Matrix read_frames(std::istream& in, Index dim) {
  std::vector<Vector> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::stringstream ss(line);
    std::vector<double> vals;
    std::string tok;
    while (ss >> tok) {
      double v = 0.0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
        throw mild::ParseError("frame input: bad value '" + tok + "'", line_no);
      }
      vals.push_back(v);
    }
    if (vals.empty()) continue;
    if (static_cast<Index>(vals.size()) != dim) {
      throw mild::ParseError("frame input: expected " +
                                 std::to_string(dim) + " values",
                             line_no);
    }
    rows.push_back(Eigen::Map<const Vector>(vals.data(), dim));
  }
  Matrix m(static_cast<Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Index>(i)) = rows[i].transpose();
  return m;
}

int run_condition(ConditionArgs& a) {
  const auto model = mild::pipeline::load(a.model);
  const Index window = model.config.window;
  const Index d1 = model.vae.agent1.input_dim() / window;
  const Index d2 = model.vae.agent2.input_dim() / window;

  if (a.stream) {
    mild::pipeline::OnlineConditioner cond(model, a.label);
    std::ifstream file;
    std::istream* in = &std::cin;
    if (!a.input.empty() && a.input != "-") {
      file.open(a.input);
      if (!file) throw mild::IoFailure("cannot open '" + a.input + "'");
      in = &file;
    }
    std::vector<Vector> buffer;
    std::string line;
    std::cout << "t";
    for (Index c = 0; c < model.vae.agent2.input_dim(); ++c) std::cout << ",v" << c << "[input]";
    std::cout << '\n' << std::flush;
    while (std::getline(*in, line)) {
      std::stringstream one(line);
      const Matrix f = read_frames(one, d1);
      if (f.rows() == 0) continue;
      buffer.push_back(f.row(0).transpose());
      if (static_cast<Index>(buffer.size()) < window) continue;
      Vector w(window * d1);
      for (Index k = 0; k < window; ++k) {
        w.segment(k * d1, d1) = buffer[buffer.size() - static_cast<std::size_t>(window - k)];
      }
      const Vector pred = cond.push(w);
      std::cout << cond.time() - 1;
      for (Index c = 0; c < pred.size(); ++c) std::cout << ',' << num(pred(c));
      std::cout << '\n' << std::flush;
    }
    return 0;
  }

  Matrix frames;
  if (!a.data.empty()) {
    const auto demos = a.pre.load(a.data);
    const Index idx = a.demo < 0 ? 0 : a.demo;
    if (idx >= static_cast<Index>(demos.size())) {
      throw UsageError("--demo " + std::to_string(idx) + " out of range (dataset has " +
                       std::to_string(demos.size()) + " demos)");
    }
    frames = demos[static_cast<std::size_t>(idx)].agent1;
  } else if (!a.input.empty()) {
    if (a.input == "-") {
      frames = read_frames(std::cin, d1);
    } else {
      std::ifstream in(a.input);
      if (!in) throw mild::IoFailure("cannot open '" + a.input + "'");
      frames = read_frames(in, d1);
    }
  } else {
    throw UsageError("condition needs --input or --data");
  }
  if (frames.cols() != d1) {
    throw mild::DimensionMismatch("agent-1 frames have " + std::to_string(frames.cols()) +
                                  " values, the model expects " + std::to_string(d1));
  }
  const Matrix windows = mild::dataio::window_stack(frames, window);
  const Matrix pred = mild::pipeline::condition(model, a.label, windows);
  auto out = open_out(a.out);
  write_matrix_csv(out, pred, "v");
  auto fout = open_out(a.frames_out);
  write_matrix_csv(fout, mild::dataio::first_frames(pred, d2), "x");
  std::cout << pred.rows() << " predictions written to " << a.out << " and " << a.frames_out << '\n';
  return 0;
}

// ----------------------------------------------------------------- eval

struct EvalArgs {
  std::string model;
  std::string data;
  std::string prefix = "eval";
  Index joint_dim = 1;
  std::string units = "input";
  Preprocess pre;
};

void add_eval(CLI::App& app, EvalArgs& a, CLI::App*& cmd) {
  cmd = app.add_subcommand("eval", "Per-timestep prediction MSE on a test dataset");
  cmd->add_option("--model", a.model, "Checkpoint")->required();
  cmd->add_option("--data", a.data, "Test dataset")->required();
  cmd->add_option("--out-prefix", a.prefix, "Writes <prefix>_summary.csv and <prefix>_curve.csv")
      ->capture_default_str();
  cmd->add_option("--joint-dim", a.joint_dim, "Coordinates per joint for the per-joint MSE")
      ->capture_default_str();
  cmd->add_option("--units", a.units, "Unit label of the raw data (e.g. cm, rad)")->capture_default_str();
  a.pre.add(cmd);
}

int run_eval(EvalArgs& a) {
  const auto model = mild::pipeline::load(a.model);
  const auto demos = a.pre.load(a.data);
  const auto report = mild::eval::evaluate(model, demos, a.joint_dim, a.units);
  auto s = open_out(a.prefix + "_summary.csv");
  mild::eval::write_summary_csv(s, report);
  auto c = open_out(a.prefix + "_curve.csv");
  mild::eval::write_curve_csv(c, report);
  for (const auto& r : report.classes) {
    std::cout << r.label << ": MSE " << num(r.coordinate.mean) << " +/- " << num(r.coordinate.std)
              << " (squared " << a.units << " per coordinate, " << r.demos << " demos)\n";
  }
  return 0;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  mild::dataio::SynthConfig cfg;
  std::string config;
  std::string out = "synth.txt";
  std::string truth;
};

void add_synth(CLI::App& app, SynthArgs& a, CLI::App*& cmd) {
  cmd = app.add_subcommand("synth", "Generate a synthetic coupled-oscillator dataset");
  cmd->add_option("--config", a.config, "JSON config (keys modes, T, demos, classes, sigma, seed)");
  cmd->add_option("--classes", a.cfg.classes)->capture_default_str();
  cmd->add_option("--modes", a.cfg.modes)->capture_default_str();
  cmd->add_option("--demos", a.cfg.demos_per_class, "Demos per class")->capture_default_str();
  cmd->add_option("--T", a.cfg.steps, "Frames per demo")->capture_default_str();
  cmd->add_option("--sigma", a.cfg.sigma, "Observation noise std")->capture_default_str();
  cmd->add_option("--seed", a.cfg.seed)->capture_default_str();
  cmd->add_option("--blend-steps", a.cfg.blend_steps, "Steps over which phases blend")->capture_default_str();
  cmd->add_option("--angle-step", a.cfg.angle_step, "Coupling rotation per mode (radians)")->capture_default_str();
  cmd->add_option("--out", a.out)->capture_default_str();
  cmd->add_option("--truth", a.truth, "Also write generator parameters as JSON");
}

int run_synth(CLI::App* cmd, SynthArgs& a) {
  mild::dataio::SynthConfig cfg;
  if (!a.config.empty()) cfg = mild::dataio::load_synth_config(a.config);
  auto given = [&](const char* name) { return cmd->count(name) > 0; };
  if (given("--classes")) cfg.classes = a.cfg.classes;
  if (given("--modes")) cfg.modes = a.cfg.modes;
  if (given("--demos")) cfg.demos_per_class = a.cfg.demos_per_class;
  if (given("--T")) cfg.steps = a.cfg.steps;
  if (given("--sigma")) cfg.sigma = a.cfg.sigma;
  if (given("--seed")) cfg.seed = a.cfg.seed;
  if (given("--blend-steps")) cfg.blend_steps = a.cfg.blend_steps;
  if (given("--angle-step")) cfg.angle_step = a.cfg.angle_step;
  const auto result = mild::dataio::synth_interactions(cfg);
  mild::dataio::save_dataset(a.out, result.demos);
  if (!a.truth.empty()) {
    json modes = json::array();
    for (const auto& m : result.truth.modes) {
      modes.push_back({{"period", m.period},
                       {"amplitude", m.amplitude},
                       {"coupling_gain", m.coupling_gain},
                       {"coupling_angle", m.coupling_angle},
                       {"coupling_offset", {m.coupling_offset(0), m.coupling_offset(1)}}});
    }
    json demos = json::array();
    for (const auto& d : result.truth.demos) {
      demos.push_back({{"class", d.class_index}, {"amplitude_scale", d.amplitude_scale}, {"phase", d.phase}});
    }
    const json j{{"class_labels", result.truth.class_labels},
                 {"class_modes", result.truth.class_modes},
                 {"boundaries", result.truth.boundaries},
                 {"blend_steps", result.truth.blend_steps},
                 {"modes", modes},
                 {"demos", demos}};
    auto out = open_out(a.truth);
    out << j.dump(2) << '\n';
  }
  std::cout << result.demos.size() << " demos written to " << a.out << '\n';
  return 0;
}

// -------------------------------------------------------------- inspect

int run_inspect(const std::string& path) {
  const auto header = mild::pipeline::read_header(path);
  const auto model = mild::pipeline::load(path);
  std::cout << "format version " << header.version << ", config hash " << std::hex
            << header.config_hash << std::dec << ", timestamp " << header.timestamp << '\n';
  std::cout << "agent 1: input " << model.vae.agent1.input_dim() << ", latent "
            << model.vae.agent1.latent_dim() << ", " << model.vae.agent1.parameter_count()
            << " parameters\n";
  std::cout << "agent 2: input " << model.vae.agent2.input_dim() << ", latent "
            << model.vae.agent2.latent_dim() << ", " << model.vae.agent2.parameter_count()
            << " parameters\n";
  std::cout << "config " << config_to_json(model.config).dump() << '\n';
  for (const auto& [label, h] : model.hsmms) {
    std::cout << "class " << label << ": " << h.size() << " components, max duration "
              << h.max_duration << '\n';
    for (Index i = 0; i < h.size(); ++i) {
      const auto& d = h.durations[static_cast<std::size_t>(i)];
      std::cout << "  component " << i << ": initial " << num(h.initial(i)) << ", duration "
                << num(d.mean) << " +/- " << num(d.std) << ", stay " << num(h.transition(i, i)) << '\n';
    }
    const auto sched = mild::hsmm::prior_schedule(h, 2 * h.max_duration * h.size());
    std::cout << "  prior schedule switches:";
    for (std::size_t t = 1; t < sched.size(); ++t) {
      if (sched[t] != sched[t - 1]) std::cout << ' ' << t << "->" << sched[t];
    }
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interaction learning with VAE latent HSMMs"};
  app.require_subcommand(1);
  TrainArgs train;
  ConditionArgs cond;
  EvalArgs ev;
  SynthArgs synth;
  std::string inspect_path;
  CLI::App* train_cmd = nullptr;
  CLI::App* cond_cmd = nullptr;
  CLI::App* eval_cmd = nullptr;
  CLI::App* synth_cmd = nullptr;
  add_train(app, train, train_cmd);
  add_condition(app, cond, cond_cmd);
  add_eval(app, ev, eval_cmd);
  add_synth(app, synth, synth_cmd);
  auto* inspect_cmd = app.add_subcommand("inspect", "Print checkpoint config and HSMM summaries");
  inspect_cmd->add_option("model", inspect_path, "Checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return run_train(train_cmd, train);
    if (cond_cmd->parsed()) return run_condition(cond);
    if (eval_cmd->parsed()) return run_eval(ev);
    if (synth_cmd->parsed()) return run_synth(synth_cmd, synth);
    if (inspect_cmd->parsed()) return run_inspect(inspect_path);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const mild::NonFiniteLoss& e) {
    std::cerr << "numeric failure (epoch " << e.epoch() << "): " << e.what() << '\n';
    return kExitNumeric;
  } catch (const mild::NotPositiveDefinite& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const mild::SingularMatrix& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const mild::SingularBlock& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const mild::ParseError& e) {
    std::cerr << "data error: " << e.what();
    if (e.line() > 0) std::cerr << " (line " << e.line() << ')';
    std::cerr << '\n';
    return kExitData;
  } catch (const mild::Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
