#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mild/numkit.hpp"

namespace mild::dataio {

using numkit::Index;
using numkit::Matrix;
using numkit::Vector;

/// One time-aligned two-agent demonstration. Rows are frames.
struct RawDemo {
  std::string label;
  Matrix agent1;
  Matrix agent2;
  double frame_rate = 40.0;
};

/// Stride-1 window stacking of a RawDemo. Row t is frames t..t+w-1 of the
/// raw sequence flattened in time-major order.
struct WindowedDemo {
  std::string label;
  Matrix agent1;
  Matrix agent2;
  Index window = 1;
};

/// Reference-column subtraction applied at load time. When `reference` is
/// non-empty every consecutive group of reference.size() columns has the
/// reference columns' values subtracted (e.g. joint positions relative to the
/// shoulder).
struct OriginNormalization {
  std::vector<Index> agent1_reference;
  std::vector<Index> agent2_reference;
};

struct SchemaConfig {
  OriginNormalization origin;
};

struct Dataset {
  std::vector<RawDemo> demos;
  std::map<std::string, std::size_t> class_counts;
};

/// Parses the line-oriented dataset format (grammar in README.md). Throws
/// ParseError with the offending line number, or EmptyDataset.
Dataset parse_dataset(std::istream& in, const SchemaConfig& schema = {});
Dataset load_dataset(const std::filesystem::path& path, const SchemaConfig& schema = {});

/// Writes demos in the dataset format using shortest round-trip numerals.
void write_dataset(std::ostream& out, std::span<const RawDemo> demos);
void save_dataset(const std::filesystem::path& path, std::span<const RawDemo> demos);

/// (T - w + 1) x (w * d) matrix of stacked windows. Throws WindowTooLong.
Matrix window_stack(const Matrix& sequence, Index window);
WindowedDemo window_stack(const RawDemo& demo, Index window);

/// First frame of every window.
Matrix first_frames(const Matrix& windows, Index frame_dim);

/// Inverse of window_stack: first frame of every window plus the remaining
/// frames of the last window.
Matrix unstack(const Matrix& windows, Index frame_dim);

/// Linear interpolation of `sequence` at `length` uniformly spaced fractional
/// indices spanning the first and last rows.
Matrix resample_linear(const Matrix& sequence, Index length);

/// Resamples the longer sequence to the length of the shorter one.
std::pair<Matrix, Matrix> align_and_downsample(const Matrix& a, const Matrix& b);

/// Centered moving average per column; the window shrinks to the available
/// frames at the sequence edges. `window` must be odd.
Matrix moving_average(const Matrix& sequence, Index window);

/// Synthetic coupled-oscillator interactions with known ground truth.
struct SynthConfig {
  Index modes = 3;
  Index steps = 120;
  Index demos_per_class = 20;
  Index classes = 2;
  double sigma = 0.01;
  std::uint64_t seed = 1;
  double frame_rate = 40.0;
  /// Steps over which one phase blends into the next.
  Index blend_steps = 12;
  /// Coupling rotation of mode m is (m + 1) * angle_step radians.
  double angle_step = 0.39269908169872414;
};

/// Oscillator and coupling parameters of one mode.
struct ModeParams {
  double period = 0.0;     // steps per revolution
  double amplitude = 0.0;
  double coupling_gain = 0.0;
  double coupling_angle = 0.0;  // radians
  Vector coupling_offset;       // 2 entries
};

struct DemoParams {
  Index class_index = 0;
  double amplitude_scale = 1.0;
  double phase = 0.0;
};

struct SynthTruth {
  std::vector<std::string> class_labels;
  std::vector<ModeParams> modes;
  /// class_modes[c][j] is the mode active during phase j of class c.
  std::vector<std::vector<Index>> class_modes;
  /// First step of phases 1..modes-1 (shared by every class).
  std::vector<Index> boundaries;
  /// Steps over which amplitude, frequency and coupling blend into the next
  /// phase, centered on each boundary.
  Index blend_steps = 12;
  std::vector<DemoParams> demos;
};

struct SynthResult {
  std::vector<RawDemo> demos;
  SynthTruth truth;
};

SynthResult synth_interactions(const SynthConfig& config);

/// Per-phase blend weights at step t (sums to 1).
Vector phase_weights(const SynthTruth& truth, Index steps, Index t);

/// Noise-free agent-2 frame for a class at step t given the noise-free
/// agent-1 frame.
Vector coupling(const SynthTruth& truth, Index class_index, Index steps, Index t,
                const Vector& agent1);

/// Reads a JSON synthetic-generator config. Keys: modes, T, demos, classes,
/// sigma, seed, frame_rate, blend_steps, angle_step (all optional).
SynthConfig load_synth_config(const std::filesystem::path& path);

std::map<std::string, std::size_t> class_histogram(std::span<const RawDemo> demos);

}  // namespace mild::dataio
