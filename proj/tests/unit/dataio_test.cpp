#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mild/dataio.hpp"
#include "mild/errors.hpp"

using mild::numkit::Index;
using mild::numkit::Matrix;
using mild::numkit::Rng;
using mild::numkit::Vector;
namespace io = mild::dataio;

namespace {

io::Dataset parse(const std::string& text, const io::SchemaConfig& schema = {}) {
  std::istringstream in(text);
  return io::parse_dataset(in, schema);
}

std::size_t parse_error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const mild::ParseError& e) {
    return e.line();
  }
  return 0;
}

Matrix ramp(Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = static_cast<double>(r * cols + c);
  }
  return m;
}

}  // namespace

TEST(ParseDataset, TwoDemosTwoClasses) {
  const auto ds = parse(
      "# two tiny demos\n"
      "demo wave 2 1 1 40\n"
      "0.0 1.0\n"
      "0.5 1.5  # trailing comment\n"
      "\n"
      "demo shake 1 2 1 30\n"
      "+1 -2 3e-1\n");
  ASSERT_EQ(ds.demos.size(), 2u);
  EXPECT_EQ(ds.class_counts.at("wave"), 1u);
  EXPECT_EQ(ds.class_counts.at("shake"), 1u);
  EXPECT_EQ(ds.demos[0].agent1(1, 0), 0.5);
  EXPECT_EQ(ds.demos[0].agent2(1, 0), 1.5);
  EXPECT_EQ(ds.demos[1].agent1(0, 0), 1.0);
  EXPECT_EQ(ds.demos[1].agent1(0, 1), -2.0);
  EXPECT_EQ(ds.demos[1].agent2(0, 0), 0.3);
  EXPECT_EQ(ds.demos[1].frame_rate, 30.0);
}

TEST(ParseDataset, NanIsRejectedWithLocation) {
  const std::string text = "demo a 2 1 1 40\n0 1\nnan 2\n";
  try {
    parse(text);
    FAIL() << "expected ParseError";
  } catch (const mild::ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("frame 1"), std::string::npos);
  }
  EXPECT_EQ(parse_error_line("demo a 1 1 1 40\ninf 2\n"), 2u);
}

TEST(ParseDataset, StructuralErrors) {
  EXPECT_EQ(parse_error_line("demo a 3 1 1 40\n0 1\n1 2\n"), 3u);       // too few frames, last line read
  EXPECT_EQ(parse_error_line("demo a 1 1 1 40\n0 1\n1 2\n"), 3u);       // too many
  EXPECT_EQ(parse_error_line("demo a 1 1 1 40\n0 1 2\n"), 2u);          // wrong width
  EXPECT_EQ(parse_error_line("0 1\n"), 1u);                             // no header
  EXPECT_EQ(parse_error_line("demo a 1 1 40\n"), 1u);                   // short header
  EXPECT_EQ(parse_error_line("demo a x 1 1 40\n"), 1u);                 // bad count
  EXPECT_EQ(parse_error_line("demo a 1 1 1 40\n0 abc\n"), 2u);          // bad number
  EXPECT_EQ(parse_error_line("demo a 2 1 1 40\n0 1\ndemo b 1 1 1 40\n0 1\n"), 3u);
}

TEST(ParseDataset, EmptyInputIsEmptyDataset) {
  EXPECT_THROW(parse("# nothing here\n\n"), mild::EmptyDataset);
}

TEST(ParseDataset, OriginNormalization) {
  io::SchemaConfig schema;
  schema.origin.agent1_reference = {0, 1};
  const auto ds = parse("demo a 1 4 1 40\n1 2 4 7 9\n", schema);
  EXPECT_EQ(ds.demos[0].agent1.row(0), (Vector(4) << 0, 0, 3, 5).finished().transpose());
  EXPECT_EQ(ds.demos[0].agent2(0, 0), 9.0);
}

TEST(WriteDataset, RoundTripIsValueIdentical) {
  io::SynthConfig cfg;
  cfg.demos_per_class = 3;
  cfg.steps = 30;
  const auto synth = io::synth_interactions(cfg);
  std::stringstream buf;
  io::write_dataset(buf, synth.demos);
  const auto back = io::parse_dataset(buf);
  ASSERT_EQ(back.demos.size(), synth.demos.size());
  for (std::size_t i = 0; i < back.demos.size(); ++i) {
    EXPECT_EQ(back.demos[i].label, synth.demos[i].label);
    EXPECT_EQ(back.demos[i].agent1, synth.demos[i].agent1);
    EXPECT_EQ(back.demos[i].agent2, synth.demos[i].agent2);
    EXPECT_EQ(back.demos[i].frame_rate, synth.demos[i].frame_rate);
  }
}

TEST(WriteDataset, FileRoundTripAndMissingFile) {
  const auto dir = std::filesystem::temp_directory_path() / "mild_dataio_test";
  std::filesystem::create_directories(dir);
  io::RawDemo d{"x", ramp(3, 2), ramp(3, 1), 25.0};
  const std::vector<io::RawDemo> demos{d};
  io::save_dataset(dir / "d.txt", demos);
  const auto back = io::load_dataset(dir / "d.txt");
  EXPECT_EQ(back.demos[0].agent1, d.agent1);
  EXPECT_THROW(io::load_dataset(dir / "missing.txt"), mild::IoFailure);
}

TEST(WindowStack, SkeletonAndJointAngleInputSizes) {
  EXPECT_EQ(io::window_stack(Matrix::Zero(50, 12), 40).cols(), 480);
  EXPECT_EQ(io::window_stack(Matrix::Zero(50, 7), 40).cols(), 280);
}

TEST(WindowStack, CountAndTimeMajorFlattening) {
  const Matrix seq = ramp(6, 2);
  const Matrix w = io::window_stack(seq, 3);
  ASSERT_EQ(w.rows(), 4);
  ASSERT_EQ(w.cols(), 6);
  for (Index t = 0; t < 4; ++t) {
    for (Index k = 0; k < 3; ++k) {
      EXPECT_EQ(w(t, 2 * k), seq(t + k, 0));
      EXPECT_EQ(w(t, 2 * k + 1), seq(t + k, 1));
    }
  }
}

TEST(WindowStack, WindowOneIsIdentity) {
  const Matrix seq = ramp(5, 3);
  EXPECT_EQ(io::window_stack(seq, 1), seq);
}

TEST(WindowStack, TooLongThrows) {
  EXPECT_THROW(io::window_stack(Matrix::Zero(4, 2), 5), mild::WindowTooLong);
  io::RawDemo d{"a", Matrix::Zero(4, 2), Matrix::Zero(4, 1), 40.0};
  EXPECT_THROW(io::window_stack(d, 5), mild::WindowTooLong);
}

TEST(WindowStack, UnstackReconstructsSequence) {
  Rng rng(111);
  for (Index w : {1, 2, 5, 9}) {
    const Matrix seq = rng.normal_matrix(20, 3);
    const Matrix win = io::window_stack(seq, w);
    EXPECT_EQ(io::unstack(win, 3), seq);
    EXPECT_EQ(io::first_frames(win, 3), seq.topRows(20 - w + 1));
  }
}

TEST(WindowStack, DemoKeepsLabelAndBothAgents) {
  io::RawDemo d{"lbl", ramp(8, 2), ramp(8, 3), 40.0};
  const auto w = io::window_stack(d, 4);
  EXPECT_EQ(w.label, "lbl");
  EXPECT_EQ(w.window, 4);
  EXPECT_EQ(w.agent1.rows(), 5);
  EXPECT_EQ(w.agent2.cols(), 12);
}

TEST(AlignAndDownsample, EqualLengthsUnchanged) {
  Rng rng(112);
  const Matrix a = rng.normal_matrix(10, 2);
  const Matrix b = rng.normal_matrix(10, 3);
  const auto [x, y] = io::align_and_downsample(a, b);
  EXPECT_EQ(x, a);
  EXPECT_EQ(y, b);
}

TEST(AlignAndDownsample, RampToFivePoints) {
  Matrix r(9, 1);
  for (Index i = 0; i < 9; ++i) r(i, 0) = static_cast<double>(i);
  const auto [x, y] = io::align_and_downsample(r, Matrix::Zero(5, 1));
  ASSERT_EQ(x.rows(), 5);
  for (Index i = 0; i < 5; ++i) EXPECT_EQ(x(i, 0), 2.0 * static_cast<double>(i));
  EXPECT_EQ(y.rows(), 5);
}

TEST(AlignAndDownsample, SineDeviation) {
  Matrix s(100, 1);
  for (Index i = 0; i < 100; ++i) s(i, 0) = std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / 99.0);
  const auto [x, y] = io::align_and_downsample(Matrix::Zero(50, 1), s);
  ASSERT_EQ(y.rows(), 50);
  double worst = 0.0;
  for (Index j = 0; j < 50; ++j) {
    const double u = static_cast<double>(j) / 49.0;  // fraction of the time span
    worst = std::max(worst, std::abs(y(j, 0) - std::sin(2.0 * std::numbers::pi * u)));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(AlignAndDownsample, KeepsEndpointsExactly) {
  Rng rng(113);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 5 + static_cast<Index>(rng.below(60));
    const Index m = 2 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - 2)));
    const Matrix a = rng.normal_matrix(n, 3);
    const auto [x, y] = io::align_and_downsample(a, Matrix::Zero(m, 1));
    EXPECT_EQ(x.row(0), a.row(0));
    EXPECT_EQ(x.row(m - 1), a.row(n - 1));
  }
}

TEST(MovingAverage, ConstantAndIdentity) {
  const Matrix c = Matrix::Constant(7, 2, 3.25);
  EXPECT_LT((io::moving_average(c, 5) - c).cwiseAbs().maxCoeff(), 1e-15);
  Rng rng(114);
  const Matrix r = rng.normal_matrix(9, 3);
  EXPECT_EQ(io::moving_average(r, 1), r);
}

TEST(MovingAverage, AlternatingSignsInterior) {
  Matrix x(8, 1);
  for (Index i = 0; i < 8; ++i) x(i, 0) = i % 2 == 0 ? 1.0 : -1.0;
  const Matrix y = io::moving_average(x, 3);
  for (Index i = 1; i < 7; ++i) EXPECT_NEAR(y(i, 0), -x(i, 0) / 3.0, 1e-15);
  // Edges average the two available frames.
  EXPECT_NEAR(y(0, 0), 0.0, 1e-15);
}

TEST(MovingAverage, NeverAmplifiesRange) {
  Rng rng(115);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = rng.normal_matrix(30, 2);
    const Matrix y = io::moving_average(x, 1 + 2 * static_cast<Index>(rng.below(6)));
    EXPECT_EQ(y.rows(), 30);
    for (Index c = 0; c < 2; ++c) {
      EXPECT_GE(y.col(c).minCoeff(), x.col(c).minCoeff() - 1e-15);
      EXPECT_LE(y.col(c).maxCoeff(), x.col(c).maxCoeff() + 1e-15);
    }
  }
}

TEST(MovingAverage, EvenWindowRejected) {
  EXPECT_THROW(io::moving_average(Matrix::Zero(5, 1), 4), mild::Error);
}

TEST(Synth, CountsAndLabels) {
  io::SynthConfig cfg;
  const auto s = io::synth_interactions(cfg);
  EXPECT_EQ(s.demos.size(), 40u);
  const auto hist = io::class_histogram(s.demos);
  EXPECT_EQ(hist.at("class0"), 20u);
  EXPECT_EQ(hist.at("class1"), 20u);
  EXPECT_EQ(s.demos[0].agent1.rows(), 120);
  EXPECT_EQ(s.demos[0].agent1.cols(), 2);
  EXPECT_EQ(s.demos[0].agent2.cols(), 2);
  ASSERT_EQ(s.truth.boundaries.size(), 2u);
  EXPECT_EQ(s.truth.boundaries[0], 40);
  EXPECT_EQ(s.truth.boundaries[1], 80);
}

TEST(Synth, ZeroNoiseFollowsCouplingExactly) {
  io::SynthConfig cfg;
  cfg.sigma = 0.0;
  cfg.demos_per_class = 3;
  const auto s = io::synth_interactions(cfg);
  for (std::size_t n = 0; n < s.demos.size(); ++n) {
    const auto& d = s.demos[n];
    const Index c = s.truth.demos[n].class_index;
    for (Index t = 0; t < cfg.steps; ++t) {
      const Vector expected = io::coupling(s.truth, c, cfg.steps, t, d.agent1.row(t).transpose());
      EXPECT_EQ(d.agent2.row(t), expected.transpose());
    }
  }
}

TEST(Synth, SameSeedSameData) {
  io::SynthConfig cfg;
  cfg.demos_per_class = 2;
  const auto a = io::synth_interactions(cfg);
  const auto b = io::synth_interactions(cfg);
  for (std::size_t i = 0; i < a.demos.size(); ++i) {
    EXPECT_EQ(a.demos[i].agent1, b.demos[i].agent1);
    EXPECT_EQ(a.demos[i].agent2, b.demos[i].agent2);
  }
  cfg.seed = 2;
  const auto c = io::synth_interactions(cfg);
  EXPECT_NE(a.demos[0].agent1, c.demos[0].agent1);
}

TEST(Synth, NoiseLevelMatchesSigma) {
  io::SynthConfig cfg;
  cfg.sigma = 0.05;
  const auto s = io::synth_interactions(cfg);
  cfg.sigma = 0.0;
  const auto clean = io::synth_interactions(cfg);
  double sum = 0.0;
  double n = 0.0;
  for (std::size_t i = 0; i < s.demos.size(); ++i) {
    sum += (s.demos[i].agent1 - clean.demos[i].agent1).squaredNorm();
    n += static_cast<double>(s.demos[i].agent1.size());
  }
  EXPECT_NEAR(std::sqrt(sum / n), 0.05, 0.003);
}

TEST(Synth, PhaseWeightsSumToOneAndSwitch) {
  io::SynthConfig cfg;
  const auto s = io::synth_interactions(cfg);
  for (Index t = 0; t < cfg.steps; ++t) {
    const Vector w = io::phase_weights(s.truth, cfg.steps, t);
    EXPECT_NEAR(w.sum(), 1.0, 1e-15);
    EXPECT_GE(w.minCoeff(), 0.0);
  }
  EXPECT_EQ(io::phase_weights(s.truth, cfg.steps, 10)(0), 1.0);
  EXPECT_EQ(io::phase_weights(s.truth, cfg.steps, 60)(1), 1.0);
  EXPECT_EQ(io::phase_weights(s.truth, cfg.steps, 110)(2), 1.0);
}

TEST(Synth, ClassesUseDifferentModeOrders) {
  io::SynthConfig cfg;
  const auto s = io::synth_interactions(cfg);
  ASSERT_EQ(s.truth.class_modes.size(), 2u);
  EXPECT_NE(s.truth.class_modes[0], s.truth.class_modes[1]);
}

TEST(Synth, ConfigFileKeys) {
  const auto path = std::filesystem::temp_directory_path() / "mild_synth_cfg.json";
  {
    std::ofstream f(path);
    f << R"({"modes": 4, "T": 90, "demos": 5, "classes": 3, "sigma": 0.02, "seed": 9, "blend_steps": 12})";
  }
  const auto cfg = io::load_synth_config(path);
  EXPECT_EQ(cfg.modes, 4);
  EXPECT_EQ(cfg.steps, 90);
  EXPECT_EQ(cfg.demos_per_class, 5);
  EXPECT_EQ(cfg.classes, 3);
  EXPECT_EQ(cfg.sigma, 0.02);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.blend_steps, 12);
}
