#include <gtest/gtest.h>
#include <sys/wait.h>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mild/dataio.hpp"
#include "mild/pipeline.hpp"

using mild::numkit::Index;
using mild::numkit::Matrix;
namespace fs = std::filesystem;
namespace io = mild::dataio;
namespace pl = mild::pipeline;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

// Runs the CLI with stderr folded into the captured output.
Run cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MILD_CLI_PATH + "\" " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  while (const std::size_t n = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path tmp() {
  const fs::path dir = fs::path(MILD_TEST_TMP) / "cli";
  fs::create_directories(dir);
  return dir;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Matrix read_csv_matrix(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');  // t
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      std::from_chars(cell.data(), cell.data() + cell.size(), v);
      row.push_back(v);
    }
    rows.push_back(row);
  }
  Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  }
  return m;
}

const std::string kSmallTrain =
    "--latent-dim 2 --hidden 6 --window 3 --samples 2 --components 2 --epochs 2 --no-wall-clock";

// Small dataset plus one trained checkpoint shared by the tests below.
struct Fixture {
  fs::path data = tmp() / "small.txt";
  fs::path model = tmp() / "small.ckpt";
  fs::path log = tmp() / "small_log.csv";
  int train_code = -1;
  Fixture() {
    cli("synth --demos 2 --T 30 --seed 3 --out " + q(data));
    train_code = cli("train --data " + q(data) + " --out " + q(model) + " --log " + q(log) + " " + kSmallTrain).code;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST(Cli, MissingRequiredOptionIsUsageError) {
  EXPECT_EQ(cli("train").code, 2);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("synth --demos notanumber").code, 2);
}

TEST(Cli, SynthWritesRequestedDemos) {
  const auto out = tmp() / "synth_a.txt";
  const auto r = cli("synth --classes 2 --modes 3 --demos 20 --T 120 --sigma 0.01 --seed 1 --out " + q(out));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto ds = io::load_dataset(out);
  EXPECT_EQ(ds.demos.size(), 40u);
  EXPECT_EQ(ds.class_counts.at("class0"), 20u);
  EXPECT_EQ(ds.demos[0].agent1.rows(), 120);
}

TEST(Cli, SynthIsSeedDeterministic) {
  const auto a = tmp() / "synth_b1.txt";
  const auto b = tmp() / "synth_b2.txt";
  const auto c = tmp() / "synth_b3.txt";
  ASSERT_EQ(cli("synth --demos 3 --seed 5 --out " + q(a)).code, 0);
  ASSERT_EQ(cli("synth --demos 3 --seed 5 --out " + q(b)).code, 0);
  ASSERT_EQ(cli("synth --demos 3 --seed 6 --out " + q(c)).code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_NE(slurp(a), slurp(c));
}

TEST(Cli, SynthMatchesLibraryGenerator) {
  const auto out = tmp() / "synth_c.txt";
  ASSERT_EQ(cli("synth --demos 2 --T 50 --sigma 0 --blend-steps 4 --angle-step 0.5 --seed 4 --out " + q(out)).code, 0);
  io::SynthConfig sc;
  sc.demos_per_class = 2;
  sc.steps = 50;
  sc.sigma = 0.0;
  sc.blend_steps = 4;
  sc.angle_step = 0.5;
  sc.seed = 4;
  const auto expected = io::synth_interactions(sc);
  const auto got = io::load_dataset(out);
  ASSERT_EQ(got.demos.size(), expected.demos.size());
  for (std::size_t i = 0; i < got.demos.size(); ++i) {
    EXPECT_EQ(got.demos[i].agent1, expected.demos[i].agent1);
    EXPECT_EQ(got.demos[i].agent2, expected.demos[i].agent2);
  }
}

TEST(Cli, TrainWritesCheckpointAndLog) {
  const auto& f = fixture();
  ASSERT_EQ(f.train_code, 0);
  std::ifstream log(f.log);
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header.rfind("epoch,class,reconstruction[squared input],kl[nats]", 0), 0u);
  int rows = 0;
  for (std::string l; std::getline(log, l);) ++rows;
  EXPECT_EQ(rows, 4);  // 2 epochs, 2 classes
}

TEST(Cli, TrainTwiceGivesIdenticalCheckpoints) {
  const auto& f = fixture();
  const auto second = tmp() / "second.ckpt";
  ASSERT_EQ(cli("train --data " + q(f.data) + " --out " + q(second) + " --log " +
                q(tmp() / "second_log.csv") + " " + kSmallTrain)
                .code,
            0);
  EXPECT_EQ(slurp(f.model), slurp(second));
  EXPECT_EQ(slurp(f.log), slurp(tmp() / "second_log.csv"));
}

TEST(Cli, TrainRejectsWrongClassCount) {
  const auto r = cli("train --classes 3 --data " + q(fixture().data) + " --out " + q(tmp() / "x.ckpt") +
                     " --log " + q(tmp() / "x.csv") + " " + kSmallTrain);
  EXPECT_EQ(r.code, 3);
}

TEST(Cli, TrainMissingDataFileIsDataError) {
  EXPECT_EQ(cli("train --data " + q(tmp() / "nope.txt") + " --out " + q(tmp() / "x.ckpt")).code, 3);
}

TEST(Cli, ConditionMatchesLibraryBitExactly) {
  const auto& f = fixture();
  ASSERT_EQ(f.train_code, 0);
  const auto windows = tmp() / "pred_w.csv";
  const auto frames = tmp() / "pred_f.csv";
  const auto r = cli("condition --model " + q(f.model) + " --class class1 --data " + q(f.data) +
                     " --demo 3 --out " + q(windows) + " --frames-out " + q(frames));
  ASSERT_EQ(r.code, 0) << r.output;

  const auto model = pl::load(f.model);
  const auto ds = io::load_dataset(f.data);
  const Matrix w = io::window_stack(ds.demos[3].agent1, model.config.window);
  const Matrix expected = pl::condition(model, "class1", w);
  const Matrix got = read_csv_matrix(windows);
  EXPECT_EQ(got.rows(), 28);  // T - window + 1
  EXPECT_EQ(got, expected);
  EXPECT_EQ(read_csv_matrix(frames), io::first_frames(expected, 2));
}

TEST(Cli, ConditionFromFrameFile) {
  const auto& f = fixture();
  const auto input = tmp() / "frames.txt";
  {
    std::ofstream out(input);
    for (int t = 0; t < 7; ++t) out << 0.1 * t << ' ' << -0.05 * t << '\n';
  }
  const auto windows = tmp() / "pred_in.csv";
  const auto r = cli("condition --model " + q(f.model) + " --class class0 --input " + q(input) + " --out " +
                     q(windows) + " --frames-out " + q(tmp() / "pred_in_f.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_csv_matrix(windows).rows(), 5);
}

TEST(Cli, ConditionUnknownClassNamesKnownClasses) {
  const auto r = cli("condition --model " + q(fixture().model) + " --class dance --data " + q(fixture().data) +
                     " --out " + q(tmp() / "u.csv") + " --frames-out " + q(tmp() / "uf.csv"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("class0"), std::string::npos);
  EXPECT_NE(r.output.find("class1"), std::string::npos);
}

TEST(Cli, EvalWritesSummaryAndCurve) {
  const auto& f = fixture();
  const auto prefix = tmp() / "ev";
  const auto r = cli("eval --model " + q(f.model) + " --data " + q(f.data) + " --out-prefix " + q(prefix) +
                     " --units cm");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("class0: MSE"), std::string::npos);
  const auto summary = slurp(tmp() / "ev_summary.csv");
  EXPECT_NE(summary.find("squared cm"), std::string::npos);
  std::ifstream curve(tmp() / "ev_curve.csv");
  int rows = -1;
  for (std::string l; std::getline(curve, l);) ++rows;
  EXPECT_EQ(rows, 2 * 28);
}

TEST(Cli, InspectPrintsComponents) {
  const auto r = cli("inspect " + q(fixture().model));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("class class0: 2 components"), std::string::npos);
  EXPECT_NE(r.output.find("agent 2: input 6"), std::string::npos);
}

TEST(Cli, CorruptCheckpointIsDataError) {
  const auto bad = tmp() / "bad.ckpt";
  {
    std::ofstream out(bad, std::ios::binary);
    out << "not a checkpoint";
  }
  EXPECT_EQ(cli("inspect " + q(bad)).code, 3);
}

TEST(Cli, DivergentTrainingIsNumericError) {
  const auto r = cli("train --data " + q(fixture().data) + " --out " + q(tmp() / "div.ckpt") + " --log " +
                     q(tmp() / "div.csv") + " --latent-dim 2 --hidden 6 --window 3 --components 2 " +
                     "--epochs 50 --lr 1e30 --no-wall-clock");
  EXPECT_EQ(r.code, 4) << r.output;
}
