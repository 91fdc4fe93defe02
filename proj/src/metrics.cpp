#include "pmtk/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

#include "pmtk/error.hpp"

namespace pmtk::metrics {

void GaussianStats::validate() const {
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw InvalidArgument("GaussianStats: covariance shape does not match mean");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-8) throw InvalidArgument("GaussianStats: covariance not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-8) throw InvalidArgument("GaussianStats: covariance not PSD");
}

GaussianStats fit_gaussian(const Eigen::MatrixXd& features, double ridge) {
  if (features.rows() < 2) throw InvalidArgument("fit_gaussian needs at least two samples");
  GaussianStats s;
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(features.rows() - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  s.cov.diagonal().array() += ridge;
  return s;
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size()) throw InvalidArgument("frechet_distance: dimension mismatch");
  a.validate();
  b.validate();
  const Eigen::MatrixXd a_half = sqrtm_psd(a.cov);
  const Eigen::MatrixXd cross = sqrtm_psd(a_half * b.cov * a_half);
  const double mean_term = (a.mean - b.mean).squaredNorm();
  return mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
}

double diversity(std::span<const data::MotionSequence> samples, int n_pairs, std::mt19937_64& rng) {
  if (samples.size() < 2) throw InvalidArgument("diversity needs at least two samples");
  if (n_pairs < 1) throw InvalidArgument("diversity needs n_pairs >= 1");
  const auto size = samples.front().values.size();
  for (const auto& s : samples)
    if (s.values.size() != size) throw InvalidArgument("diversity: samples must share a shape");
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  double total = 0.0;
  for (int p = 0; p < n_pairs; ++p) {
    const std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    while (j == i) j = pick(rng);
    double sq = 0.0;
    for (std::size_t k = 0; k < size; ++k) {
      const double d = static_cast<double>(samples[i].values[k]) - samples[j].values[k];
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / n_pairs;
}

namespace {

void check_same_shape(const data::MotionSequence& a, const data::MotionSequence& b, const char* who) {
  if (a.n_frames != b.n_frames || a.joints != b.joints || a.dims != b.dims || a.values.size() != b.values.size())
    throw InvalidArgument(std::string(who) + ": motion shapes differ");
}

void check_same_shape(const data::RegionMaskSet& a, const data::RegionMaskSet& b) {
  if (a.n_frames != b.n_frames || a.height != b.height || a.width != b.width || a.values.size() != b.values.size())
    throw InvalidArgument("mask_iou: mask shapes differ");
}

float channel_value(const data::RegionMaskSet& m, std::int64_t n, std::size_t pixel, MaskChannel c) {
  const std::size_t base = static_cast<std::size_t>(n) * 3 * m.plane();
  switch (c) {
    case MaskChannel::Face:
      return m.values[base + pixel];
    case MaskChannel::Body:
      return m.values[base + m.plane() + pixel];
    case MaskChannel::Background:
      return m.values[base + 2 * m.plane() + pixel];
    case MaskChannel::Foreground:
      return m.values[base + pixel] + m.values[base + m.plane() + pixel];
  }
  return 0.0f;
}

}  // namespace

double lvd(const data::MotionSequence& generated, const data::MotionSequence& reference) {
  check_same_shape(generated, reference, "lvd");
  if (generated.n_frames < 2) throw InvalidArgument("lvd needs at least two frames");
  const std::size_t fs = generated.frame_size();
  double total = 0.0;
  for (std::int64_t n = 1; n < generated.n_frames; ++n) {
    for (std::size_t k = 0; k < fs; ++k) {
      const double vg = static_cast<double>(generated.values[n * fs + k]) - generated.values[(n - 1) * fs + k];
      const double vr = static_cast<double>(reference.values[n * fs + k]) - reference.values[(n - 1) * fs + k];
      total += std::abs(vg - vr);
    }
  }
  return total / (static_cast<double>(generated.n_frames - 1) * fs);
}

double l1_pose(const data::MotionSequence& generated, const data::MotionSequence& reference) {
  check_same_shape(generated, reference, "l1_pose");
  if (generated.values.empty()) throw InvalidArgument("l1_pose: empty motion");
  double total = 0.0;
  for (std::size_t k = 0; k < generated.values.size(); ++k)
    total += std::abs(static_cast<double>(generated.values[k]) - reference.values[k]);
  return total / static_cast<double>(generated.values.size());
}

double mask_iou(const data::RegionMaskSet& a, const data::RegionMaskSet& b, MaskChannel channel) {
  check_same_shape(a, b);
  std::size_t inter = 0, uni = 0;
  for (std::int64_t n = 0; n < a.n_frames; ++n) {
    for (std::size_t p = 0; p < a.plane(); ++p) {
      const bool in_a = channel_value(a, n, p, channel) > 0.5f;
      const bool in_b = channel_value(b, n, p, channel) > 0.5f;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double flicker(const data::RegionMaskSet& masks) {
  if (masks.n_frames < 2) throw InvalidArgument("flicker needs at least two frames");
  const std::size_t frame = 3 * masks.plane();
  double total = 0.0;
  for (std::int64_t n = 1; n < masks.n_frames; ++n)
    for (std::size_t k = 0; k < frame; ++k)
      total += std::abs(static_cast<double>(masks.values[n * frame + k]) - masks.values[(n - 1) * frame + k]);
  return total / (static_cast<double>(masks.n_frames - 1) * frame);
}

}  // namespace pmtk::metrics
