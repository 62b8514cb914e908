#pragma once

// Checkpoints are named-array archives holding the raw parameters, the EMA
// shadow, the optimizer moments, and enough metadata (config echo, step
// counters, RNG states) to resume a run bit-exactly.

#include <string>

#include "flowback/harness/archive.hpp"
#include "flowback/harness/config.hpp"
#include "flowback/optim.hpp"

namespace flowback {

struct Checkpoint {
  RunConfig cfg;
  GradMap raw;     // parameter values
  GradMap ema;     // EMA shadow
  GradMap opt_m, opt_v;
  long opt_t = 0;
  std::size_t step = 0;
  std::uint64_t data_rng_state = 0;
  std::uint64_t train_rng_state = 0;
};

inline void save_checkpoint(const std::string& dir, const Checkpoint& ck,
                            const ParamSet& shapes) {
  ArrayArchive a;
  a.meta["step"] = std::to_string(ck.step);
  a.meta["opt.t"] = std::to_string(ck.opt_t);
  a.meta["rng.data"] = std::to_string(ck.data_rng_state);
  a.meta["rng.train"] = std::to_string(ck.train_rng_state);
  for (const auto& [k, v] : config_echo(ck.cfg)) a.meta["cfg." + k] = v;
  auto dump = [&](const std::string& prefix, const GradMap& gm) {
    for (const auto& [name, vals] : gm) {
      if (shapes.contains(name))
        a.put(prefix + name, shapes.at(name).shape(), vals);
      else
        a.put_flat(prefix + name, vals);
    }
  };
  dump("raw/", ck.raw);
  dump("ema/", ck.ema);
  dump("opt.m/", ck.opt_m);
  dump("opt.v/", ck.opt_v);
  a.save(dir);
}

inline Checkpoint load_checkpoint(const std::string& dir) {
  ArrayArchive a = ArrayArchive::load(dir);
  Checkpoint ck;
  ck.step = std::stoull(a.meta_at("step"));
  ck.opt_t = std::stol(a.meta_at("opt.t"));
  ck.data_rng_state = std::stoull(a.meta_at("rng.data"));
  ck.train_rng_state = std::stoull(a.meta_at("rng.train"));
  ConfigKvs kvs;
  for (const auto& [k, v] : a.meta)
    if (k.rfind("cfg.", 0) == 0) kvs.emplace_back(k.substr(4), v);
  ck.cfg = make_config(kvs);
  for (const auto& [name, arr] : a.arrays) {
    if (name.rfind("raw/", 0) == 0) ck.raw[name.substr(4)] = arr.data;
    else if (name.rfind("ema/", 0) == 0) ck.ema[name.substr(4)] = arr.data;
    else if (name.rfind("opt.m/", 0) == 0) ck.opt_m[name.substr(6)] = arr.data;
    else if (name.rfind("opt.v/", 0) == 0) ck.opt_v[name.substr(6)] = arr.data;
  }
  return ck;
}

}  // namespace flowback
