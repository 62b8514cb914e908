// flowback CLI: train / sample / classify / bench / roundtrip-check.
// Every verb takes --config <path> plus repeatable --set key=value
// overrides; exit code 0 only when all internal assertions pass.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowback/flowback.hpp"

namespace fb = flowback;
using nlohmann::json;

namespace {

fb::ConfigKvs parse_sets(const std::vector<std::string>& sets) {
  fb::ConfigKvs kvs;
  for (const auto& s : sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw fb::GraphError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string t) {
      auto b = t.find_first_not_of(" \t");
      auto e = t.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
    };
    kvs.emplace_back(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return kvs;
}

struct LoadedModel {
  fb::RunConfig cfg;
  fb::FlowModel model;
};

LoadedModel model_from_checkpoint(const std::string& dir, bool use_ema) {
  fb::Checkpoint ck = fb::load_checkpoint(dir);
  LoadedModel lm{ck.cfg, fb::model_with_values(ck.cfg, use_ema ? ck.ema : ck.raw)};
  return lm;
}

int cmd_train(const std::string& config, const std::vector<std::string>& sets,
              const std::string& out, const std::string& metrics_path) {
  fb::RunConfig cfg = fb::load_config(config, parse_sets(sets));
  if (!metrics_path.empty()) {
    const auto parent = std::filesystem::path(metrics_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
  }
  fb::MetricsWriter stdout_writer(std::cout);
  fb::MetricsWriter file_writer(metrics_path);
  fb::MetricsWriter* w =
      metrics_path.empty() ? &stdout_writer : &file_writer;
  fb::TrainState st = fb::run_training(cfg, out, w);
  std::cerr << "final checkpoint: " << fb::checkpoint_dir(out, st.step)
            << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt, std::size_t n, long label,
               double cfg_scale, bool has_scale, std::uint64_t seed,
               bool has_seed, bool denoise, bool raw,
               const std::string& out) {
  LoadedModel lm = model_from_checkpoint(ckpt, !raw);
  if (label < 0 || std::size_t(label) >= lm.model.K)
    throw fb::GraphError("label out of range for this checkpoint");
  const double w = has_scale ? cfg_scale : lm.cfg.cfg_scale;
  const std::uint64_t s = has_seed ? seed : lm.cfg.seed ^ 0x5a3f1e27ULL;
  auto xs = fb::draw_samples(lm.model, std::size_t(label), n, w, s, denoise);

  std::vector<double> mean, cov;
  fb::sample_moments(xs, mean, cov);
  json rep;
  rep["n"] = n;
  rep["label"] = label;
  rep["cfg_scale"] = w;
  rep["seed"] = s;
  rep["mean"] = mean;
  rep["cov"] = cov;
  std::cout << rep.dump() << "\n";

  if (!out.empty()) {
    fb::ArrayArchive a;
    a.meta["count"] = std::to_string(n);
    a.meta["label"] = std::to_string(label);
    a.meta["cfg_scale"] = std::to_string(w);
    a.meta["seed"] = std::to_string(s);
    for (std::size_t i = 0; i < n; ++i)
      a.put("x/" + std::to_string(i), {lm.model.D, lm.model.C}, xs[i]);
    a.put_flat("mean", mean);
    a.put_flat("cov", cov);
    a.save(out);
  }
  for (double v : mean)
    if (!std::isfinite(v)) throw fb::GraphError("non-finite sample moments");
  return 0;
}

int cmd_classify(const std::string& ckpt, std::size_t n, std::uint64_t seed,
                 bool raw, bool with_multi) {
  LoadedModel lm = model_from_checkpoint(ckpt, !raw);
  fb::ToyData data = fb::ToyData::make(lm.cfg);
  fb::DetRng rng(seed);
  std::vector<double> lrs = with_multi ? std::vector<double>{0.1, 1.0, 10.0}
                                       : std::vector<double>{};
  fb::ClassifyReport rep = fb::classify_report(
      lm.model, data, n, rng, lrs, 5, std::min<std::size_t>(n, 200));
  json j;
  j["n"] = rep.n;
  j["acc_single"] = rep.acc_single;
  j["acc_brute"] = rep.acc_brute;
  j["agreement"] = rep.agreement;
  if (with_multi) {
    j["multi_lrs"] = rep.multi_lrs;
    j["multi_agreement"] = rep.multi_agreement;
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_bench(const std::string& config, const std::vector<std::string>& sets,
              std::size_t warmup, std::size_t timed) {
  fb::RunConfig cfg = fb::load_config(config, parse_sets(sets));
  auto results = fb::run_bench(cfg, warmup, timed);
  json j;
  double accel = 0.0, naive = 0.0;
  for (const auto& r : results) {
    j[r.mode] = {{"steps_per_sec", r.steps_per_sec},
                 {"peak_nodes", r.peak_nodes}};
    if (r.mode == "reverse") accel = r.steps_per_sec;
    if (r.mode == "reverse-naive") naive = r.steps_per_sec;
    if (!(r.steps_per_sec > 0.0))
      throw fb::GraphError("bench: non-positive throughput for " + r.mode);
  }
  j["ratios"]["reverse_over_naive"] = accel / naive;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_roundtrip(const std::string& ckpt) {
  bool ok = true;
  auto check = [&](const std::string& name, bool pass) {
    std::cout << (pass ? "pass" : "FAIL") << " " << name << "\n";
    ok = ok && pass;
  };

  fb::Checkpoint ck = fb::load_checkpoint(ckpt);
  const std::string tmp =
      (std::filesystem::temp_directory_path() / "flowback_rt").string();
  std::filesystem::remove_all(tmp);
  {
    fb::TrainState st = fb::restore_train_state(ck);
    fb::save_checkpoint(tmp, fb::make_checkpoint(st), st.model.params);
  }
  fb::Checkpoint ck2 = fb::load_checkpoint(tmp);
  check("checkpoint save/load round-trip bit-exact",
        ck.raw == ck2.raw && ck.ema == ck2.ema && ck.opt_m == ck2.opt_m &&
            ck.opt_v == ck2.opt_v && ck.step == ck2.step &&
            ck.opt_t == ck2.opt_t &&
            ck.data_rng_state == ck2.data_rng_state &&
            ck.train_rng_state == ck2.train_rng_state);

  // Probe batch evaluates identically across two independent loads.
  fb::FlowModel m1 = fb::model_with_values(ck.cfg, ck.raw);
  fb::FlowModel m2 = fb::model_with_values(ck2.cfg, ck2.raw);
  fb::ToyData data = fb::ToyData::make(ck.cfg);
  fb::DetRng rng(12345);
  bool probe_ok = true, invert_ok = true;
  for (std::size_t i = 0; i < 8; ++i) {
    fb::Sample s = data.draw(rng);
    fb::Var x = fb::Var::constant({m1.D, m1.C}, s.x);
    double l1 = fb::nf_loss(fb::encode(x, s.label, m1)).item();
    double l2 = fb::nf_loss(fb::encode(x, s.label, m2)).item();
    probe_ok = probe_ok && l1 == l2 && std::isfinite(l1);

    // encode -> block-wise inverse recovers the input
    fb::EncodeResult enc = fb::encode(x, s.label, m1);
    fb::Var cur = fb::cut(enc.z);
    fb::Var cond = fb::cut(m1.cond(s.label));
    for (std::size_t t = m1.blocks.size(); t-- > 0;)
      cur = fb::block_inverse_sequential(cur, cond, m1.blocks[t]);
    const auto& rec = cur.data();
    for (std::size_t k = 0; k < rec.size(); ++k)
      invert_ok = invert_ok && std::abs(rec[k] - s.x[k]) < 1e-8;
  }
  check("probe batch loss identical across loads", probe_ok);
  check("encode/decode identity on probe batch (1e-8)", invert_ok);

  // One resumed step is bit-identical when repeated.
  auto one_step = [&] {
    fb::TrainState st = fb::restore_train_state(ck);
    fb::StepReport r = fb::train_step(st);
    return std::tuple{r.nf_loss, r.align_loss, r.total,
                      st.model.params.values()};
  };
  check("resumed step deterministic (bit-exact)", one_step() == one_step());

  std::filesystem::remove_all(tmp);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowback: autoregressive normalizing-flow toolkit"};
  app.require_subcommand(1);

  std::string config, out, metrics_path, ckpt;
  std::vector<std::string> sets;
  std::size_t n = 1000, warmup = 1, timed = 5;
  long label = 0;
  double cfg_scale = 1.0;
  std::uint64_t seed = 0;
  bool denoise = false, raw = false, with_multi = false;

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config);
  train->add_option("--set", sets, "override key=value");
  train->add_option("--out", out)->required();
  train->add_option("--metrics", metrics_path, "JSONL path (default stdout)");

  auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  sample->add_option("--checkpoint", ckpt)->required();
  sample->add_option("--n", n);
  sample->add_option("--label", label);
  auto* scale_opt = sample->add_option("--cfg-scale", cfg_scale);
  auto* seed_opt = sample->add_option("--seed", seed);
  sample->add_flag("--denoise", denoise);
  sample->add_flag("--raw", raw, "use raw instead of EMA weights");
  sample->add_option("--out", out, "sample archive directory");

  auto* classify = app.add_subcommand("classify", "evaluate the classifiers");
  classify->add_option("--checkpoint", ckpt)->required();
  classify->add_option("--n", n);
  classify->add_option("--seed", seed);
  classify->add_flag("--raw", raw, "use raw instead of EMA weights");
  classify->add_flag("--multi", with_multi, "include the multi-step sweep");

  auto* bench = app.add_subcommand("bench", "reverse-pass throughput");
  bench->add_option("--config", config);
  bench->add_option("--set", sets, "override key=value");
  bench->add_option("--warmup", warmup);
  bench->add_option("--timed", timed);

  auto* rt = app.add_subcommand("roundtrip-check",
                                "run the invariant suite on a checkpoint");
  rt->add_option("--checkpoint", ckpt)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config, sets, out, metrics_path);
    if (sample->parsed())
      return cmd_sample(ckpt, n, label, cfg_scale, scale_opt->count() > 0,
                        seed, seed_opt->count() > 0, denoise, raw, out);
    if (classify->parsed()) return cmd_classify(ckpt, n, seed, raw, with_multi);
    if (bench->parsed()) return cmd_bench(config, sets, warmup, timed);
    if (rt->parsed()) return cmd_roundtrip(ckpt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
