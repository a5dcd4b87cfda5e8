#include "mild/eval.hpp"

#include <charconv>
#include <cmath>
#include <ostream>

#include "mild/errors.hpp"

namespace mild::eval {

namespace {

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) return {};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

SequenceErrors sequence_errors(const Matrix& predicted_windows, const Matrix& truth_windows,
                               Index frame_dim, Index joint_dim) {
  if (predicted_windows.rows() != truth_windows.rows() ||
      predicted_windows.cols() != truth_windows.cols()) {
    throw DimensionMismatch("sequence_errors: prediction and truth shapes differ");
  }
  if (frame_dim < 1 || predicted_windows.cols() % frame_dim != 0 || joint_dim < 1 ||
      frame_dim % joint_dim != 0) {
    throw DimensionMismatch("sequence_errors: frame or joint size does not divide the window");
  }
  const Index steps = predicted_windows.rows();
  const Matrix diff = predicted_windows - truth_windows;
  SequenceErrors e;
  e.coordinate.resize(steps);
  e.joint.resize(steps);
  e.window.resize(steps);
  const Index joints = frame_dim / joint_dim;
  for (Index t = 0; t < steps; ++t) {
    const auto frame = diff.row(t).head(frame_dim);
    e.coordinate(t) = frame.squaredNorm() / static_cast<double>(frame_dim);
    e.joint(t) = frame.squaredNorm() / static_cast<double>(joints);
    e.window(t) = diff.row(t).squaredNorm() / static_cast<double>(diff.cols());
  }
  return e;
}

void ReportBuilder::add(const std::string& label, const SequenceErrors& errors) {
  auto& a = acc_[label];
  ++a.demos;
  const Index steps = errors.coordinate.size();
  if (static_cast<Index>(a.per_step.size()) < steps) a.per_step.resize(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) {
    a.coordinate.push_back(errors.coordinate(t));
    a.joint.push_back(errors.joint(t));
    a.window.push_back(errors.window(t));
    a.per_step[static_cast<std::size_t>(t)].push_back(errors.coordinate(t));
  }
}

EvalReport ReportBuilder::finish(const std::string& units) const {
  EvalReport r;
  r.units = units;
  for (const auto& [label, a] : acc_) {
    ClassReport c;
    c.label = label;
    c.demos = a.demos;
    c.steps = a.coordinate.size();
    c.coordinate = mean_std(a.coordinate);
    c.joint = mean_std(a.joint);
    c.window = mean_std(a.window);
    for (const auto& s : a.per_step) {
      c.curve.push_back(mean_std(s));
      c.curve_count.push_back(s.size());
    }
    r.classes.push_back(std::move(c));
  }
  return r;
}

EvalReport evaluate(const pipeline::TrainedModel& model, std::span<const dataio::RawDemo> demos,
                    Index joint_dim, const std::string& units) {
  if (demos.empty()) throw EmptyDataset("evaluate: no test demos");
  for (const auto& d : demos) {
    if (model.hsmms.count(d.label) == 0) {
      std::string known;
      for (const auto& [l, m] : model.hsmms) known += (known.empty() ? "" : ", ") + l;
      throw UnknownClass("test class '" + d.label + "' is not in the model; known classes: " + known);
    }
  }
  ReportBuilder builder;
  for (const auto& d : demos) {
    const auto w = dataio::window_stack(d, model.config.window);
    const Matrix pred = pipeline::condition(model, d.label, w.agent1);
    builder.add(d.label, sequence_errors(pred, w.agent2, d.agent2.cols(), joint_dim));
  }
  return builder.finish(units);
}

void write_summary_csv(std::ostream& out, const EvalReport& report) {
  out << "class,demos,steps,mse_coord_mean,mse_coord_std,mse_joint_mean,mse_joint_std,"
         "mse_window_mean,mse_window_std,units\n";
  for (const auto& c : report.classes) {
    out << c.label << ',' << c.demos << ',' << c.steps << ',' << num(c.coordinate.mean) << ','
        << num(c.coordinate.std) << ',' << num(c.joint.mean) << ',' << num(c.joint.std) << ','
        << num(c.window.mean) << ',' << num(c.window.std) << ",squared " << report.units << '\n';
  }
}

void write_curve_csv(std::ostream& out, const EvalReport& report) {
  out << "class,t,mse_coord_mean,mse_coord_std,demos,units\n";
  for (const auto& c : report.classes) {
    for (std::size_t t = 0; t < c.curve.size(); ++t) {
      out << c.label << ',' << t << ',' << num(c.curve[t].mean) << ',' << num(c.curve[t].std) << ','
          << c.curve_count[t] << ",squared " << report.units << '\n';
    }
  }
}

}  // namespace mild::eval
