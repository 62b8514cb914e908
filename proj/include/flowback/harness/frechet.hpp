#pragma once

// Fréchet distance between Gaussian fits of two feature sets:
//   d^2 = |m1 - m2|^2 + tr(C1 + C2 - 2 (C1^{1/2} C2 C1^{1/2})^{1/2}).
// A small ridge keeps the matrix square roots well-posed on tiny sets.

#include <vector>

#include <Eigen/Dense>

#include "flowback/graph.hpp"

namespace flowback {

inline constexpr double kFrechetRidge = 1e-6;

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline void gaussian_fit(const std::vector<std::vector<double>>& feats,
                         Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  if (feats.size() < 2)
    throw GraphError("frechet_proxy: need at least 2 samples per set");
  const std::size_t n = feats.size(), d = feats[0].size();
  mean = Eigen::VectorXd::Zero(Eigen::Index(d));
  for (const auto& f : feats) {
    if (f.size() != d)
      throw GraphError("frechet_proxy: inconsistent feature dimension");
    mean += Eigen::Map<const Eigen::VectorXd>(f.data(), Eigen::Index(d));
  }
  mean /= double(n);
  cov = Eigen::MatrixXd::Zero(Eigen::Index(d), Eigen::Index(d));
  for (const auto& f : feats) {
    Eigen::VectorXd c =
        Eigen::Map<const Eigen::VectorXd>(f.data(), Eigen::Index(d)) - mean;
    cov += c * c.transpose();
  }
  cov /= double(n - 1);
}

}  // namespace detail

inline double frechet_proxy(const std::vector<std::vector<double>>& a,
                            const std::vector<std::vector<double>>& b) {
  Eigen::VectorXd m1, m2;
  Eigen::MatrixXd c1, c2;
  detail::gaussian_fit(a, m1, c1);
  detail::gaussian_fit(b, m2, c2);
  if (m1.size() != m2.size())
    throw GraphError("frechet_proxy: feature dimensions differ across sets");
  const Eigen::Index d = m1.size();
  c1 += kFrechetRidge * Eigen::MatrixXd::Identity(d, d);
  c2 += kFrechetRidge * Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd s1 = detail::psd_sqrt(c1);
  Eigen::MatrixXd cross = detail::psd_sqrt(s1 * c2 * s1);
  const double dist2 =
      (m1 - m2).squaredNorm() + (c1 + c2 - 2.0 * cross).trace();
  if (!std::isfinite(dist2)) throw GraphError("frechet_proxy: non-finite");
  return dist2 < 0.0 ? 0.0 : dist2;
}

}  // namespace flowback
