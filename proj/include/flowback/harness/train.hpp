#pragma once

// Training loop: batch assembly (noise augmentation, label dropout, frozen
// target features from the clean input), the optimizer/EMA step, JSONL
// metrics, and periodic checkpoints with bit-exact resume.

#include <filesystem>
#include <string>
#include <vector>

#include "flowback/align.hpp"
#include "flowback/harness/checkpoint.hpp"
#include "flowback/harness/config.hpp"
#include "flowback/harness/data.hpp"
#include "flowback/harness/metrics.hpp"

namespace flowback {

struct TrainState {
  RunConfig cfg;
  FlowModel model;  // params include the projector
  Projector proj;
  TargetEncoder target;
  AlignmentConfig align;
  ToyData data;
  AdamW opt;
  Ema ema;
  DetRng data_rng{0};
  DetRng train_rng{0};  // noise + label dropout
  std::size_t step = 0;
};

inline TargetEncoder make_target(const RunConfig& cfg) {
  if (cfg.target_kind == "stub")
    return TargetEncoder::stub(cfg.model.channels, cfg.target_dfeat,
                               cfg.target_seed);
  if (cfg.target_kind == "file") {
    if (cfg.target_file.empty())
      throw GraphError("target.kind = file requires target.file");
    TargetEncoder e;
    e.kind = TargetEncoder::Kind::FileInjected;
    e.in_channels = cfg.model.channels;
    e.dfeat = cfg.target_dfeat;
    ArrayArchive a = ArrayArchive::load(cfg.target_file);
    for (const auto& [name, arr] : a.arrays)
      if (name.rfind("features/", 0) == 0)
        e.injected[name.substr(9)] = arr.data;
    return e;
  }
  throw GraphError("unknown target.kind: " + cfg.target_kind);
}

inline TrainState init_train_state(const RunConfig& cfg) {
  TrainState st;
  st.cfg = cfg;
  st.model = build_model(cfg.model, cfg.seed);
  DetRng prng(cfg.seed ^ 0x70726f6aULL);
  st.proj = make_projector(cfg.model.channels, 16, cfg.target_dfeat,
                           st.model.params, prng);
  st.target = make_target(cfg);
  st.align = cfg.alignment();
  st.align.validate(cfg.model.blocks, cfg.model.layers);
  st.data = ToyData::make(cfg);
  st.opt.lr = cfg.lr;
  st.opt.beta1 = cfg.beta1;
  st.opt.beta2 = cfg.beta2;
  st.opt.weight_decay = cfg.weight_decay;
  st.ema.decay = cfg.ema_decay;
  st.ema.init(st.model.params);
  st.data_rng.set_state(cfg.seed ^ 0xd47a5e3bULL);
  st.train_rng.set_state(cfg.seed ^ 0x7e41b0c9ULL);
  return st;
}

// One batch: samples from the data stream, frozen features of the clean
// input, then noise and label dropout. RNG consumption order is fixed per
// sample so runs are reproducible.
inline TrainBatch draw_batch(TrainState& st) {
  TrainBatch b;
  for (std::size_t i = 0; i < st.cfg.batch; ++i) {
    Sample s = st.data.draw(st.data_rng);
    b.targets.push_back(st.target.features(s.x, s.id));
    b.x.push_back(add_noise(s.x, st.model.sigma_noise, st.train_rng));
    const bool drop = st.train_rng.uniform() < st.cfg.null_label_prob;
    b.conds.push_back(st.model.cond(drop ? FlowModel::kNull : s.label));
  }
  return b;
}

inline StepReport train_step(TrainState& st, bool naive_reverse = false) {
  TrainBatch b = draw_batch(st);
  StepReport r = align_training_step(b, st.model, st.align, st.proj, st.opt,
                                    &st.ema, naive_reverse);
  ++st.step;
  return r;
}

inline Checkpoint make_checkpoint(const TrainState& st) {
  Checkpoint ck;
  ck.cfg = st.cfg;
  ck.raw = st.model.params.values();
  ck.ema = st.ema.shadow;
  ck.opt_m = st.opt.m;
  ck.opt_v = st.opt.v;
  ck.opt_t = st.opt.t;
  ck.step = st.step;
  ck.data_rng_state = st.data_rng.state();
  ck.train_rng_state = st.train_rng.state();
  return ck;
}

inline TrainState restore_train_state(const Checkpoint& ck) {
  TrainState st = init_train_state(ck.cfg);
  st.model.params.load_values(ck.raw);
  st.ema.shadow = ck.ema;
  st.opt.m = ck.opt_m;
  st.opt.v = ck.opt_v;
  st.opt.t = ck.opt_t;
  st.step = ck.step;
  st.data_rng.set_state(ck.data_rng_state);
  st.train_rng.set_state(ck.train_rng_state);
  return st;
}

inline TrainState restore_train_state(const std::string& ckpt_dir) {
  return restore_train_state(load_checkpoint(ckpt_dir));
}

// A fresh model carrying the given values (raw or EMA). Extra keys in the
// map (the projector's) are ignored by load_values.
inline FlowModel model_with_values(const RunConfig& cfg, const GradMap& vals) {
  FlowModel m = build_model(cfg.model, cfg.seed);
  m.params.load_values(vals);
  return m;
}

inline std::string checkpoint_dir(const std::string& out_dir,
                                  std::size_t step) {
  return out_dir + "/ckpt_" + std::to_string(step);
}

// Full run. Checkpoints land every cfg.checkpoint_every steps and at the
// end; if a step throws (non-finite loss), the last checkpoint on disk is
// left in place and the error propagates.
inline TrainState run_training(const RunConfig& cfg, const std::string& out_dir,
                               MetricsWriter* metrics = nullptr,
                               std::vector<MetricRecord>* records = nullptr) {
  TrainState st = init_train_state(cfg);
  std::filesystem::create_directories(out_dir);
  Stopwatch clock;
  while (st.step < cfg.steps) {
    StepReport rep = train_step(st);
    MetricRecord r;
    r.step = st.step;
    r.nf_loss = rep.nf_loss;
    r.align_loss = rep.align_loss;
    r.total = rep.total;
    r.wallclock = clock.seconds();
    if (metrics) metrics->write(r);
    if (records) records->push_back(r);
    if (st.step % cfg.checkpoint_every == 0 || st.step == cfg.steps)
      save_checkpoint(checkpoint_dir(out_dir, st.step), make_checkpoint(st),
                      st.model.params);
  }
  return st;
}

}  // namespace flowback
