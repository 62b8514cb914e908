#pragma once

// JSONL metrics stream. One record per training step; `wallclock` is the
// only non-deterministic field, so determinism checks compare records with
// it stripped.

#include <chrono>
#include <fstream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "flowback/graph.hpp"

namespace flowback {

struct MetricRecord {
  std::size_t step = 0;
  double nf_loss = 0.0;
  double align_loss = 0.0;
  double total = 0.0;
  double wallclock = 0.0;  // seconds since run start
};

inline nlohmann::json metric_json(const MetricRecord& r,
                                  bool with_wallclock = true) {
  nlohmann::json j;
  j["step"] = r.step;
  j["nf_loss"] = r.nf_loss;
  j["align_loss"] = r.align_loss;
  j["total"] = r.total;
  if (with_wallclock) j["wallclock"] = r.wallclock;
  return j;
}

class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw GraphError("cannot open metrics file " + path);
      out_ = &file_;
    }
  }
  explicit MetricsWriter(std::ostream& os) : out_(&os) {}

  void write(const MetricRecord& r) {
    if (!out_) return;
    (*out_) << metric_json(r).dump() << "\n";
    out_->flush();
  }

 private:
  std::ofstream file_;
  std::ostream* out_ = nullptr;
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace flowback
