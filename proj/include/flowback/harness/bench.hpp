#pragma once

// Reverse-pass throughput benchmark: timed training steps for each routing
// strategy (plus the naive sequential reverse), with peak graph node counts
// as a memory proxy.

#include <string>
#include <vector>

#include "flowback/harness/train.hpp"

namespace flowback {

struct BenchResult {
  std::string mode;
  double steps_per_sec = 0.0;
  long peak_nodes = 0;
};

// Synthetic batch with the model's geometry: standard-normal inputs, random
// labels, stub-encoder targets. Keeps the benchmark independent of any
// dataset preset.
inline TrainBatch draw_bench_batch(TrainState& st) {
  TrainBatch b;
  const std::size_t dim = st.model.D * st.model.C;
  for (std::size_t i = 0; i < st.cfg.batch; ++i) {
    std::vector<double> x(dim);
    for (auto& v : x) v = st.data_rng.normal();
    b.targets.push_back(st.target.features(x));
    b.x.push_back(std::move(x));
    b.conds.push_back(st.model.cond(st.data_rng.index(st.model.K)));
  }
  return b;
}

inline BenchResult bench_mode(const RunConfig& base, const std::string& mode,
                              std::size_t warmup, std::size_t timed) {
  RunConfig cfg = base;
  cfg.align_strategy = mode == "reverse-naive" ? "reverse" : mode;
  const bool naive = mode == "reverse-naive";
  TrainState st = init_train_state(cfg);
  auto one_step = [&] {
    TrainBatch b = draw_bench_batch(st);
    align_training_step(b, st.model, st.align, st.proj, st.opt, &st.ema, naive);
  };
  for (std::size_t i = 0; i < warmup; ++i) one_step();
  reset_peak_node_count();
  Stopwatch clock;
  for (std::size_t i = 0; i < timed; ++i) one_step();
  const double secs = clock.seconds();
  BenchResult r;
  r.mode = mode;
  r.steps_per_sec = double(timed) / (secs > 0.0 ? secs : 1e-12);
  r.peak_nodes = peak_node_count();
  return r;
}

inline std::vector<BenchResult> run_bench(const RunConfig& base,
                                          std::size_t warmup = 1,
                                          std::size_t timed = 5) {
  std::vector<BenchResult> out;
  for (const char* mode :
       {"forward", "detach", "reverse", "reverse-naive"})
    out.push_back(bench_mode(base, mode, warmup, timed));
  return out;
}

}  // namespace flowback
