#pragma once

// Toy datasets: class-conditional 2-D Gaussians, concentric rings, and 8x8
// procedural class-templated images (patchified to tokens). All are
// generated on demand from a deterministic RNG. A file-backed dataset
// reads a named-array archive.

#include <cmath>
#include <string>
#include <vector>

#include "flowback/harness/archive.hpp"
#include "flowback/harness/config.hpp"
#include "flowback/rng.hpp"

namespace flowback {

struct Sample {
  std::vector<double> x;  // token matrix [D, C], row-major
  std::size_t label = 0;
  std::string id;
};

class ToyData {
 public:
  static constexpr double kGaussRadius = 2.0;
  static constexpr double kGaussStd = 0.25;

  static ToyData make(const RunConfig& cfg) {
    ToyData d;
    d.kind_ = cfg.dataset;
    d.K_ = cfg.model.classes;
    d.D_ = cfg.model.tokens;
    d.C_ = cfg.model.channels;
    d.img_side_ = cfg.img_side;
    d.patch_ = cfg.patch;
    if (d.kind_ == "toyimg8") d.build_templates();
    if (d.kind_ == "file") {
      if (cfg.data_file.empty())
        throw GraphError("dataset=file requires data.file");
      d.file_ = ArrayArchive::load(cfg.data_file);
      d.file_count_ = std::stoull(d.file_.meta_at("count"));
    }
    return d;
  }

  std::size_t classes() const { return K_; }

  Sample draw(DetRng& rng) const {
    Sample s;
    s.label = std::size_t(rng.index(K_));
    s.x = draw_x(s.label, rng);
    return s;
  }

  std::vector<double> draw_x(std::size_t label, DetRng& rng) const {
    if (kind_ == "gauss2d") {
      const auto m = gauss_mean(label);
      return {m[0] + kGaussStd * rng.normal(), m[1] + kGaussStd * rng.normal()};
    }
    if (kind_ == "rings2d") {
      const double r = 0.8 + 0.6 * double(label) + 0.05 * rng.normal();
      const double th = 2.0 * 3.14159265358979323846 * rng.uniform();
      return {r * std::cos(th), r * std::sin(th)};
    }
    if (kind_ == "toyimg8") {
      std::vector<double> img = templates_[label];
      for (auto& v : img) v += 0.1 * rng.normal();
      return patchify(img);
    }
    if (kind_ == "file") {
      const std::size_t i = std::size_t(rng.index(file_count_));
      const auto& arr = file_.at("x/" + std::to_string(i));
      // file samples carry their own labels in "y"
      return arr.data;
    }
    throw GraphError("unknown dataset kind " + kind_);
  }

  Sample file_sample(std::size_t i) const {
    Sample s;
    s.id = std::to_string(i);
    s.x = file_.at("x/" + s.id).data;
    s.label = std::size_t(file_.at("y").data.at(i));
    return s;
  }
  std::size_t file_count() const { return file_count_; }

  std::array<double, 2> gauss_mean(std::size_t label) const {
    const double th =
        2.0 * 3.14159265358979323846 * double(label) / double(K_) +
        3.14159265358979323846 / 4.0;
    return {kGaussRadius * std::cos(th), kGaussRadius * std::sin(th)};
  }

  // Empirical per-class moments over n draws, used as the reference in
  // sample-quality checks.
  void class_moments(std::size_t label, std::size_t n, DetRng& rng,
                     std::vector<double>& mean,
                     std::vector<double>& cov) const {
    const std::size_t dim = D_ * C_;
    mean.assign(dim, 0.0);
    cov.assign(dim * dim, 0.0);
    std::vector<std::vector<double>> xs;
    xs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs.push_back(draw_x(label, rng));
      for (std::size_t j = 0; j < dim; ++j) mean[j] += xs.back()[j];
    }
    for (auto& m : mean) m /= double(n);
    for (const auto& x : xs)
      for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < dim; ++b)
          cov[a * dim + b] += (x[a] - mean[a]) * (x[b] - mean[b]);
    for (auto& c : cov) c /= double(n - 1);
  }

  std::vector<double> patchify(const std::vector<double>& img) const {
    const std::size_t side = img_side_, p = patch_;
    const std::size_t per_side = side / p;
    std::vector<double> tokens;
    tokens.reserve(per_side * per_side * p * p);
    for (std::size_t pi = 0; pi < per_side; ++pi)
      for (std::size_t pj = 0; pj < per_side; ++pj)
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < p; ++j)
            tokens.push_back(img[(pi * p + i) * side + pj * p + j]);
    return tokens;
  }

 private:
  void build_templates() {
    templates_.clear();
    for (std::size_t k = 0; k < K_; ++k) {
      std::vector<double> img(img_side_ * img_side_);
      const double fx = 1.0 + double(k % 2);
      const double fy = 1.0 + double((k / 2) % 2);
      const double ph = 0.7 * double(k);
      for (std::size_t i = 0; i < img_side_; ++i)
        for (std::size_t j = 0; j < img_side_; ++j)
          img[i * img_side_ + j] =
              std::sin(fx * double(i) * 0.8 + ph) *
              std::cos(fy * double(j) * 0.8 - ph);
      templates_.push_back(std::move(img));
    }
  }

  std::string kind_;
  std::size_t K_ = 0, D_ = 0, C_ = 0, img_side_ = 8, patch_ = 2;
  std::vector<std::vector<double>> templates_;
  ArrayArchive file_;
  std::size_t file_count_ = 0;
};

}  // namespace flowback
