#pragma once

// Run configuration: flat `key = value` files with dotted keys, dataset
// presets, and CLI overrides. Precedence: defaults < dataset preset <
// config file < --set overrides < FLOWBACK_SEED.

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "flowback/align.hpp"
#include "flowback/model.hpp"

namespace flowback {

struct RunConfig {
  std::string dataset = "gauss2d";

  ModelConfig model;

  // toyimg8 geometry
  std::size_t img_side = 8;
  std::size_t patch = 2;

  // optimizer / training (defaults follow the reference hyperparameter
  // table; dataset presets rescale for desk-size runs)
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 1e-4;
  std::size_t batch = 64;
  std::size_t steps = 200;
  double ema_decay = 0.9999;
  double null_label_prob = 0.1;
  std::size_t checkpoint_every = 100;

  // alignment
  std::string align_strategy = "reverse";
  std::string align_sites;  // "t:l,t:l" (1-based); empty = default sites
  double lambda_align = 0.1;

  // target encoder
  std::string target_kind = "stub";
  std::string target_file;
  std::size_t target_dfeat = 8;
  std::uint64_t target_seed = 9001;

  std::uint64_t seed = 0;
  double cfg_scale = 1.0;

  std::string data_file;  // for dataset = file

  AlignmentConfig alignment() const {
    AlignmentConfig a;
    a.strategy = strategy_from_string(align_strategy);
    a.lambda_align = lambda_align;
    if (!align_sites.empty()) {
      std::istringstream is(align_sites);
      std::string tok;
      while (std::getline(is, tok, ',')) {
        auto colon = tok.find(':');
        if (colon == std::string::npos)
          throw GraphError("bad align.sites entry '" + tok + "'");
        std::size_t t = std::stoul(tok.substr(0, colon));
        std::size_t l = std::stoul(tok.substr(colon + 1));
        if (t < 1 || l < 1)
          throw GraphError("align.sites entries are 1-based");
        a.sites.push_back({t - 1, l - 1});
      }
    } else if (lambda_align > 0.0) {
      // Default: the last two blocks, at layer 6 (or the last layer when
      // the block is shallower).
      const std::size_t l = std::min<std::size_t>(6, model.layers) - 1;
      if (model.blocks >= 2) a.sites.push_back({model.blocks - 2, l});
      a.sites.push_back({model.blocks - 1, l});
    }
    return a;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

using ConfigKvs = std::vector<std::pair<std::string, std::string>>;

inline ConfigKvs parse_config_text(std::istream& in) {
  ConfigKvs kvs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw GraphError("config line " + std::to_string(lineno) +
                       ": expected key = value");
    kvs.emplace_back(detail::trim(line.substr(0, eq)),
                     detail::trim(line.substr(eq + 1)));
  }
  return kvs;
}

inline void apply_config_kv(RunConfig& c, const std::string& key,
                            const std::string& val) {
  auto as_u = [&] { return std::stoull(val); };
  auto as_d = [&] { return std::stod(val); };
  if (key == "dataset") c.dataset = val;
  else if (key == "data.file") c.data_file = val;
  else if (key == "model.blocks") c.model.blocks = as_u();
  else if (key == "model.layers") c.model.layers = as_u();
  else if (key == "model.channels") c.model.channels = as_u();
  else if (key == "model.tokens") c.model.tokens = as_u();
  else if (key == "model.classes") c.model.classes = as_u();
  else if (key == "model.heads") c.model.heads = as_u();
  else if (key == "model.ff_hidden") c.model.ff_hidden = as_u();
  else if (key == "model.init_scale") c.model.init_scale = as_d();
  else if (key == "model.img_side") c.img_side = as_u();
  else if (key == "model.patch") c.patch = as_u();
  else if (key == "opt.lr") c.lr = as_d();
  else if (key == "opt.beta1") c.beta1 = as_d();
  else if (key == "opt.beta2") c.beta2 = as_d();
  else if (key == "opt.weight_decay") c.weight_decay = as_d();
  else if (key == "train.batch") c.batch = as_u();
  else if (key == "train.steps") c.steps = as_u();
  else if (key == "train.ema_decay") c.ema_decay = as_d();
  else if (key == "train.sigma_noise") c.model.sigma_noise = as_d();
  else if (key == "train.null_label_prob") c.null_label_prob = as_d();
  else if (key == "train.checkpoint_every") c.checkpoint_every = as_u();
  else if (key == "align.strategy") c.align_strategy = val;
  else if (key == "align.sites") c.align_sites = val;
  else if (key == "align.lambda") c.lambda_align = as_d();
  else if (key == "target.kind") c.target_kind = val;
  else if (key == "target.file") c.target_file = val;
  else if (key == "target.dfeat") c.target_dfeat = as_u();
  else if (key == "target.seed") c.target_seed = as_u();
  else if (key == "seed") c.seed = as_u();
  else if (key == "cfg_scale") c.cfg_scale = as_d();
  else throw GraphError("unknown config key: " + key);
}

// Desk-scale geometry and training rates per toy dataset. Explicit keys in
// the config file or on the command line override these.
inline void apply_dataset_preset(RunConfig& c) {
  if (c.dataset == "gauss2d") {
    // One token of two channels: each class conditional is exactly an
    // affine Gaussian, so 200 steps converge to tight sample moments.
    c.model = ModelConfig{};
    c.model.blocks = 2;
    c.model.layers = 2;
    c.model.channels = 2;
    c.model.tokens = 1;
    c.model.classes = 2;
    c.model.ff_hidden = 8;
    c.model.sigma_noise = 0.0;
    c.lr = 0.03;
    c.ema_decay = 0.9;
    c.batch = 128;
    c.steps = 200;
    c.target_dfeat = 8;
  } else if (c.dataset == "rings2d") {
    c.model = ModelConfig{};
    c.model.blocks = 3;
    c.model.layers = 2;
    c.model.channels = 1;
    c.model.tokens = 2;
    c.model.classes = 3;
    c.model.ff_hidden = 16;
    c.model.sigma_noise = 0.0;
    c.lr = 0.02;
    c.ema_decay = 0.99;
    c.batch = 64;
    c.steps = 400;
    c.target_dfeat = 8;
  } else if (c.dataset == "toyimg8") {
    c.model = ModelConfig{};
    c.model.blocks = 2;
    c.model.layers = 2;
    c.model.channels = 4;
    c.model.tokens = 16;
    c.model.classes = 4;
    c.model.ff_hidden = 16;
    c.model.sigma_noise = 0.0;
    c.img_side = 8;
    c.patch = 2;
    c.lr = 0.01;
    c.ema_decay = 0.99;
    c.batch = 32;
    c.steps = 200;
    c.target_dfeat = 8;
  } else if (c.dataset == "file") {
    // geometry must come from the config file itself
  } else {
    throw GraphError("unknown dataset: " + c.dataset);
  }
}

inline RunConfig make_config(const ConfigKvs& kvs,
                             const ConfigKvs& overrides = {}) {
  RunConfig c;
  for (const auto& [k, v] : kvs)
    if (k == "dataset") c.dataset = v;
  for (const auto& [k, v] : overrides)
    if (k == "dataset") c.dataset = v;
  apply_dataset_preset(c);
  for (const auto& [k, v] : kvs) apply_config_kv(c, k, v);
  for (const auto& [k, v] : overrides) apply_config_kv(c, k, v);
  if (const char* env = std::getenv("FLOWBACK_SEED"))
    c.seed = std::stoull(env);
  return c;
}

inline RunConfig load_config(const std::string& path,
                             const ConfigKvs& overrides = {}) {
  ConfigKvs kvs;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw GraphError("cannot open config file " + path);
    kvs = parse_config_text(f);
  }
  return make_config(kvs, overrides);
}

// Echo of every config field, used to embed the config in checkpoints.
inline ConfigKvs config_echo(const RunConfig& c) {
  ConfigKvs kvs;
  auto add = [&](const std::string& k, const std::string& v) {
    kvs.emplace_back(k, v);
  };
  auto num = [](auto v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  add("dataset", c.dataset);
  if (!c.data_file.empty()) add("data.file", c.data_file);
  add("model.blocks", num(c.model.blocks));
  add("model.layers", num(c.model.layers));
  add("model.channels", num(c.model.channels));
  add("model.tokens", num(c.model.tokens));
  add("model.classes", num(c.model.classes));
  add("model.heads", num(c.model.heads));
  add("model.ff_hidden", num(c.model.ff_hidden));
  add("model.init_scale", num(c.model.init_scale));
  add("model.img_side", num(c.img_side));
  add("model.patch", num(c.patch));
  add("opt.lr", num(c.lr));
  add("opt.beta1", num(c.beta1));
  add("opt.beta2", num(c.beta2));
  add("opt.weight_decay", num(c.weight_decay));
  add("train.batch", num(c.batch));
  add("train.steps", num(c.steps));
  add("train.ema_decay", num(c.ema_decay));
  add("train.sigma_noise", num(c.model.sigma_noise));
  add("train.null_label_prob", num(c.null_label_prob));
  add("train.checkpoint_every", num(c.checkpoint_every));
  add("align.strategy", c.align_strategy);
  if (!c.align_sites.empty()) add("align.sites", c.align_sites);
  add("align.lambda", num(c.lambda_align));
  add("target.kind", c.target_kind);
  if (!c.target_file.empty()) add("target.file", c.target_file);
  add("target.dfeat", num(c.target_dfeat));
  add("target.seed", num(c.target_seed));
  add("seed", num(c.seed));
  add("cfg_scale", num(c.cfg_scale));
  return kvs;
}

}  // namespace flowback
