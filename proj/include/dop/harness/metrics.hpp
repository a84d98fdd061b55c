#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace dop::harness {

// One row of experiment output. Optional fields that were not measured
// serialise as empty cells so the column layout never shifts.
struct MetricRecord {
  std::string record_type = "train";
  std::string run_id;
  std::uint64_t seed = 0;
  long step = 0;
  std::optional<double> train_return;
  std::optional<double> eval_return;
  std::optional<double> loss_tb;
  std::optional<double> loss_on;
  std::optional<double> loss_td;
  std::optional<double> k_spread;
  std::optional<double> grad_variance;
  std::optional<double> bias;
  std::vector<int> argmax_actions;
  std::optional<double> wall_clock;
};

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{
      "record_type", "run_id", "seed",     "step",          "train_return", "eval_return", "loss_tb",
      "loss_on",     "loss_td", "k_spread", "grad_variance", "bias",         "argmax_actions", "wall_clock"};
  return cols;
}

// Shortest round-trip representation of a double.
inline std::string format_real(double v) {
  char buf[64];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string csv_row(const MetricRecord& r) {
  std::ostringstream os;
  auto opt = [&](const std::optional<double>& v) {
    os << ',';
    if (v) os << format_real(*v);
  };
  os << r.record_type << ',' << r.run_id << ',' << r.seed << ',' << r.step;
  opt(r.train_return);
  opt(r.eval_return);
  opt(r.loss_tb);
  opt(r.loss_on);
  opt(r.loss_td);
  opt(r.k_spread);
  opt(r.grad_variance);
  opt(r.bias);
  os << ',';
  for (std::size_t i = 0; i < r.argmax_actions.size(); ++i) os << (i ? " " : "") << r.argmax_actions[i];
  opt(r.wall_clock);
  return os.str();
}

inline std::string csv_header() {
  std::string h;
  for (std::size_t i = 0; i < csv_columns().size(); ++i) h += (i ? "," : "") + csv_columns()[i];
  return h;
}

using MetricSink = std::function<void(const MetricRecord&)>;

// Collects records in memory.
struct MetricBuffer {
  std::vector<MetricRecord> records;
  MetricSink sink() {
    return [this](const MetricRecord& r) { records.push_back(r); };
  }
};

}  // namespace dop::harness
