#include "mild/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "mild/errors.hpp"

namespace mild::dataio {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last;
}

bool parse_index(std::string_view s, Index& out) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return false;
  out = static_cast<Index>(v);
  return true;
}

void subtract_reference(Matrix& m, const std::vector<Index>& reference, const std::string& label) {
  if (reference.empty()) return;
  const Index r = static_cast<Index>(reference.size());
  if (m.cols() % r != 0) {
    throw Error("origin normalization: demo '" + label + "' has " + std::to_string(m.cols()) +
                " columns, not a multiple of the reference size " + std::to_string(r));
  }
  Matrix ref(m.rows(), r);
  for (Index c = 0; c < r; ++c) {
    if (reference[static_cast<std::size_t>(c)] < 0 || reference[static_cast<std::size_t>(c)] >= m.cols()) {
      throw Error("origin normalization: reference column out of range");
    }
    ref.col(c) = m.col(reference[static_cast<std::size_t>(c)]);
  }
  for (Index g = 0; g < m.cols() / r; ++g) m.middleCols(g * r, r) -= ref;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Dataset parse_dataset(std::istream& in, const SchemaConfig& schema) {
  Dataset ds;
  std::string raw;
  std::size_t line_no = 0;
  RawDemo* current = nullptr;
  Index expected_rows = 0;
  Index filled = 0;
  std::size_t header_line = 0;

  auto finish = [&](std::size_t at_line) {
    if (current != nullptr && filled != expected_rows) {
      throw ParseError("demo '" + current->label + "' (line " + std::to_string(header_line) +
                           ") declares " + std::to_string(expected_rows) + " frames but has " +
                           std::to_string(filled),
                       at_line);
    }
  };

  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line(raw);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;

    if (tokens[0] == "demo") {
      finish(line_no);
      if (tokens.size() != 6) {
        throw ParseError("demo header needs: demo <label> <T> <d1> <d2> <frame_rate>", line_no);
      }
      RawDemo demo;
      demo.label = std::string(tokens[1]);
      Index t = 0;
      Index d1 = 0;
      Index d2 = 0;
      if (!parse_index(tokens[2], t) || !parse_index(tokens[3], d1) || !parse_index(tokens[4], d2) ||
          !parse_double(tokens[5], demo.frame_rate) || t < 1 || d1 < 1 || d2 < 0 ||
          !std::isfinite(demo.frame_rate) || demo.frame_rate <= 0.0) {
        throw ParseError("malformed demo header for '" + demo.label + "'", line_no);
      }
      demo.agent1.resize(t, d1);
      demo.agent2.resize(t, d2);
      ds.demos.push_back(std::move(demo));
      current = &ds.demos.back();
      expected_rows = t;
      filled = 0;
      header_line = line_no;
      continue;
    }

    if (current == nullptr) throw ParseError("data record before any demo header", line_no);
    const Index d1 = current->agent1.cols();
    const Index d2 = current->agent2.cols();
    if (filled >= expected_rows) {
      throw ParseError("demo '" + current->label + "' has more frames than declared", line_no);
    }
    if (static_cast<Index>(tokens.size()) != d1 + d2) {
      throw ParseError("demo '" + current->label + "' frame " + std::to_string(filled) + " has " +
                           std::to_string(tokens.size()) + " values, expected " +
                           std::to_string(d1 + d2),
                       line_no);
    }
    for (Index c = 0; c < d1 + d2; ++c) {
      double v = 0.0;
      if (!parse_double(tokens[static_cast<std::size_t>(c)], v)) {
        throw ParseError("demo '" + current->label + "' frame " + std::to_string(filled) +
                             ": cannot parse '" + std::string(tokens[static_cast<std::size_t>(c)]) + "'",
                         line_no);
      }
      if (!std::isfinite(v)) {
        throw ParseError("demo '" + current->label + "' frame " + std::to_string(filled) +
                             ": non-finite value",
                         line_no);
      }
      if (c < d1) {
        current->agent1(filled, c) = v;
      } else {
        current->agent2(filled, c - d1) = v;
      }
    }
    ++filled;
  }
  finish(line_no);
  if (ds.demos.empty()) throw EmptyDataset("dataset contains no demos");

  for (auto& d : ds.demos) {
    subtract_reference(d.agent1, schema.origin.agent1_reference, d.label);
    subtract_reference(d.agent2, schema.origin.agent2_reference, d.label);
  }
  ds.class_counts = class_histogram(ds.demos);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, const SchemaConfig& schema) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open dataset '" + path.string() + "'");
  return parse_dataset(in, schema);
}

void write_dataset(std::ostream& out, std::span<const RawDemo> demos) {
  out << "# demo <label> <T> <d1> <d2> <frame_rate>, then T rows of d1 + d2 values\n";
  for (const auto& d : demos) {
    if (d.agent1.rows() != d.agent2.rows()) {
      throw DimensionMismatch("write_dataset: agents of '" + d.label + "' differ in length");
    }
    out << "demo " << d.label << ' ' << d.agent1.rows() << ' ' << d.agent1.cols() << ' '
        << d.agent2.cols() << ' ' << format_double(d.frame_rate) << '\n';
    for (Index t = 0; t < d.agent1.rows(); ++t) {
      std::string line;
      for (Index c = 0; c < d.agent1.cols(); ++c) {
        if (!line.empty()) line += ' ';
        line += format_double(d.agent1(t, c));
      }
      for (Index c = 0; c < d.agent2.cols(); ++c) {
        if (!line.empty()) line += ' ';
        line += format_double(d.agent2(t, c));
      }
      out << line << '\n';
    }
  }
}

void save_dataset(const std::filesystem::path& path, std::span<const RawDemo> demos) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write dataset '" + path.string() + "'");
  write_dataset(out, demos);
  if (!out) throw IoFailure("write failed for '" + path.string() + "'");
}

Matrix window_stack(const Matrix& sequence, Index window) {
  if (window < 1 || window > sequence.rows()) {
    throw WindowTooLong("window of " + std::to_string(window) + " frames does not fit a sequence of " +
                        std::to_string(sequence.rows()));
  }
  const Index d = sequence.cols();
  const Index n = sequence.rows() - window + 1;
  Matrix out(n, window * d);
  for (Index t = 0; t < n; ++t) {
    for (Index k = 0; k < window; ++k) out.row(t).segment(k * d, d) = sequence.row(t + k);
  }
  return out;
}

WindowedDemo window_stack(const RawDemo& demo, Index window) {
  if (demo.agent1.rows() != demo.agent2.rows()) {
    throw DimensionMismatch("window_stack: agents of '" + demo.label + "' differ in length");
  }
  return {demo.label, window_stack(demo.agent1, window), window_stack(demo.agent2, window), window};
}

Matrix first_frames(const Matrix& windows, Index frame_dim) {
  if (frame_dim < 1 || windows.cols() % frame_dim != 0) {
    throw DimensionMismatch("first_frames: window width is not a multiple of the frame size");
  }
  return windows.leftCols(frame_dim);
}

Matrix unstack(const Matrix& windows, Index frame_dim) {
  if (frame_dim < 1 || windows.cols() % frame_dim != 0) {
    throw DimensionMismatch("unstack: window width is not a multiple of the frame size");
  }
  if (windows.rows() == 0) return Matrix(0, frame_dim);
  const Index w = windows.cols() / frame_dim;
  const Index n = windows.rows();
  Matrix out(n + w - 1, frame_dim);
  out.topRows(n) = windows.leftCols(frame_dim);
  for (Index k = 1; k < w; ++k) out.row(n - 1 + k) = windows.row(n - 1).segment(k * frame_dim, frame_dim);
  return out;
}

Matrix resample_linear(const Matrix& sequence, Index length) {
  if (sequence.rows() == 0 || length < 1) throw EmptySequence("resample_linear: empty input");
  const Index n = sequence.rows();
  if (length == n) return sequence;
  Matrix out(length, sequence.cols());
  if (length == 1) {
    out.row(0) = sequence.row(0);
    return out;
  }
  for (Index j = 0; j < length; ++j) {
    // Exact rational position j * (n - 1) / (length - 1).
    const Index num = j * (n - 1);
    const Index lo = num / (length - 1);
    const Index rem = num % (length - 1);
    if (rem == 0) {
      out.row(j) = sequence.row(lo);
    } else {
      const double frac = static_cast<double>(rem) / static_cast<double>(length - 1);
      out.row(j) = (1.0 - frac) * sequence.row(lo) + frac * sequence.row(lo + 1);
    }
  }
  return out;
}

std::pair<Matrix, Matrix> align_and_downsample(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw EmptySequence("align_and_downsample: empty input");
  if (a.rows() == b.rows()) return {a, b};
  if (a.rows() > b.rows()) return {resample_linear(a, b.rows()), b};
  return {a, resample_linear(b, a.rows())};
}

Matrix moving_average(const Matrix& sequence, Index window) {
  if (window < 1 || window % 2 == 0) throw Error("moving_average: window must be odd and positive");
  const Index n = sequence.rows();
  const Index half = window / 2;
  Matrix out(n, sequence.cols());
  for (Index t = 0; t < n; ++t) {
    const Index lo = std::max<Index>(0, t - half);
    const Index hi = std::min<Index>(n - 1, t + half);
    out.row(t) = sequence.middleRows(lo, hi - lo + 1).colwise().mean();
  }
  return out;
}

Vector phase_weights(const SynthTruth& truth, Index steps, Index t) {
  (void)steps;
  const Index phases = static_cast<Index>(truth.boundaries.size()) + 1;
  // Continuous phase coordinate: each boundary contributes a linear ramp.
  double u = 0.0;
  const double blend = static_cast<double>(std::max<Index>(truth.blend_steps, 1));
  for (Index b : truth.boundaries) {
    u += clamp01((static_cast<double>(t - b) + 0.5 * blend) / blend);
  }
  Vector w = Vector::Zero(phases);
  const Index lo = std::min<Index>(static_cast<Index>(std::floor(u)), phases - 1);
  const double frac = u - static_cast<double>(lo);
  w(lo) = 1.0 - frac;
  if (frac > 0.0) w(lo + 1) = frac;
  return w;
}

Vector coupling(const SynthTruth& truth, Index class_index, Index steps, Index t,
                const Vector& agent1) {
  const Vector w = phase_weights(truth, steps, t);
  const auto& seq = truth.class_modes.at(static_cast<std::size_t>(class_index));
  Vector out = Vector::Zero(2);
  for (Index j = 0; j < w.size(); ++j) {
    if (w(j) == 0.0) continue;
    const auto& m = truth.modes[static_cast<std::size_t>(seq[static_cast<std::size_t>(j)])];
    const double c = std::cos(m.coupling_angle);
    const double s = std::sin(m.coupling_angle);
    Vector mapped(2);
    mapped << c * agent1(0) - s * agent1(1), s * agent1(0) + c * agent1(1);
    out += w(j) * (m.coupling_gain * mapped + m.coupling_offset);
  }
  return out;
}

SynthResult synth_interactions(const SynthConfig& config) {
  if (config.modes < 1 || config.steps < 1 || config.demos_per_class < 1 || config.classes < 1) {
    throw Error("synth_interactions: all counts must be at least 1");
  }
  SynthResult result;
  auto& truth = result.truth;
  truth.blend_steps = config.blend_steps;
  for (Index m = 0; m < config.modes; ++m) {
    ModeParams p;
    const Index r = m % 3;
    p.period = 24.0 + 12.0 * static_cast<double>(r) + 5.0 * static_cast<double>(m / 3);
    p.amplitude = 0.5 - 0.1 * static_cast<double>(r);
    p.coupling_gain = 1.0 - 0.15 * static_cast<double>(r);
    p.coupling_angle = config.angle_step * static_cast<double>(m + 1);
    p.coupling_offset = Vector(2);
    p.coupling_offset << 0.1 * std::cos(static_cast<double>(m)), 0.1 * std::sin(static_cast<double>(m));
    truth.modes.push_back(std::move(p));
  }
  for (Index c = 0; c < config.classes; ++c) {
    truth.class_labels.push_back("class" + std::to_string(c));
    std::vector<Index> seq;
    for (Index j = 0; j < config.modes; ++j) seq.push_back((j + c) % config.modes);
    truth.class_modes.push_back(std::move(seq));
  }
  for (Index j = 1; j < config.modes; ++j) {
    truth.boundaries.push_back(static_cast<Index>(
        std::llround(static_cast<double>(j * config.steps) / static_cast<double>(config.modes))));
  }

  numkit::Rng rng(config.seed);
  for (Index c = 0; c < config.classes; ++c) {
    const auto& seq = truth.class_modes[static_cast<std::size_t>(c)];
    for (Index n = 0; n < config.demos_per_class; ++n) {
      DemoParams dp;
      dp.class_index = c;
      dp.amplitude_scale = rng.uniform(0.9, 1.1);
      dp.phase = rng.uniform(-0.25, 0.25);
      truth.demos.push_back(dp);

      RawDemo demo;
      demo.label = truth.class_labels[static_cast<std::size_t>(c)];
      demo.frame_rate = config.frame_rate;
      demo.agent1.resize(config.steps, 2);
      demo.agent2.resize(config.steps, 2);
      double theta = dp.phase;
      for (Index t = 0; t < config.steps; ++t) {
        const Vector w = phase_weights(truth, config.steps, t);
        double amp = 0.0;
        double omega = 0.0;
        for (Index j = 0; j < w.size(); ++j) {
          const auto& m = truth.modes[static_cast<std::size_t>(seq[static_cast<std::size_t>(j)])];
          amp += w(j) * m.amplitude;
          omega += w(j) * 2.0 * std::numbers::pi / m.period;
        }
        Vector x1(2);
        x1 << dp.amplitude_scale * amp * std::cos(theta), dp.amplitude_scale * amp * std::sin(theta);
        const Vector x2 = coupling(truth, c, config.steps, t, x1);
        demo.agent1.row(t) = x1.transpose();
        demo.agent2.row(t) = x2.transpose();
        theta += omega;
      }
      // Noise is always drawn so sigma does not shift the parameters of later demos.
      for (Index t = 0; t < config.steps; ++t) {
        for (Index k = 0; k < 2; ++k) demo.agent1(t, k) += config.sigma * rng.normal();
        for (Index k = 0; k < 2; ++k) demo.agent2(t, k) += config.sigma * rng.normal();
      }
      result.demos.push_back(std::move(demo));
    }
  }
  return result;
}

SynthConfig load_synth_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open synth config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("synth config: ") + e.what(), 0);
  }
  SynthConfig c;
  try {
    if (j.contains("modes")) c.modes = j.at("modes").get<Index>();
    if (j.contains("T")) c.steps = j.at("T").get<Index>();
    if (j.contains("demos")) c.demos_per_class = j.at("demos").get<Index>();
    if (j.contains("classes")) c.classes = j.at("classes").get<Index>();
    if (j.contains("sigma")) c.sigma = j.at("sigma").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("frame_rate")) c.frame_rate = j.at("frame_rate").get<double>();
    if (j.contains("blend_steps")) c.blend_steps = j.at("blend_steps").get<Index>();
    if (j.contains("angle_step")) c.angle_step = j.at("angle_step").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("synth config: ") + e.what(), 0);
  }
  return c;
}

std::map<std::string, std::size_t> class_histogram(std::span<const RawDemo> demos) {
  std::map<std::string, std::size_t> h;
  for (const auto& d : demos) ++h[d.label];
  return h;
}

}  // namespace mild::dataio
