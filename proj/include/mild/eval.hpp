#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mild/dataio.hpp"
#include "mild/pipeline.hpp"

namespace mild::eval {

using numkit::Index;
using numkit::Matrix;
using numkit::Vector;

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Errors of one prediction against ground truth. Frame errors compare the
/// first frame of every window.
struct SequenceErrors {
  /// Per-step squared error averaged over coordinates.
  Vector coordinate;
  /// Per-step squared Euclidean error averaged over joints.
  Vector joint;
  /// Per-step squared error averaged over the whole window vector.
  Vector window;
};

/// `joint_dim` coordinates form one joint (3 for skeleton positions). The
/// frame dimension must be a multiple of it.
SequenceErrors sequence_errors(const Matrix& predicted_windows, const Matrix& truth_windows,
                               Index frame_dim, Index joint_dim = 1);

struct ClassReport {
  std::string label;
  std::size_t demos = 0;
  std::size_t steps = 0;
  MeanStd coordinate;
  MeanStd joint;
  MeanStd window;
  /// Per-step mean and std over demos of the coordinate MSE; `curve_count`
  /// holds how many demos reach each step.
  std::vector<MeanStd> curve;
  std::vector<std::size_t> curve_count;
};

struct EvalReport {
  std::vector<ClassReport> classes;
  std::string units = "input";
};

/// Accumulates per-step errors; mean and std run over every (demo, step).
class ReportBuilder {
 public:
  void add(const std::string& label, const SequenceErrors& errors);
  EvalReport finish(const std::string& units) const;

 private:
  struct Acc {
    std::size_t demos = 0;
    std::vector<double> coordinate;
    std::vector<double> joint;
    std::vector<double> window;
    std::vector<std::vector<double>> per_step;
  };
  std::map<std::string, Acc> acc_;
};

/// Conditions every demo on its agent-1 windows and scores the agent-2
/// prediction. Throws UnknownClass listing the model's classes when a test
/// label is missing from the model.
EvalReport evaluate(const pipeline::TrainedModel& model, std::span<const dataio::RawDemo> demos,
                    Index joint_dim = 1, const std::string& units = "input");

MeanStd mean_std(std::span<const double> values);

void write_summary_csv(std::ostream& out, const EvalReport& report);
void write_curve_csv(std::ostream& out, const EvalReport& report);

}  // namespace mild::eval
