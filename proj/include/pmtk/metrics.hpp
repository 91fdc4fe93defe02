#pragma once

// Desk-computable evaluation metrics. All functions are pure.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>

#include "pmtk/synthetic_data.hpp"

namespace pmtk::metrics {

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  // Symmetric within 1e-8 and eigenvalues >= -1e-8.
  void validate() const;
};

// Mean and unbiased covariance of the rows of `features`, plus ridge * I.
GaussianStats fit_gaussian(const Eigen::MatrixXd& features, double ridge = 1e-6);

// Square root of a symmetric PSD matrix; negative eigenvalues clamp to 0.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m);

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 sqrt(S1^1/2 S2 S1^1/2)).
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Mean L2 distance of flattened sequences over `n_pairs` random pairs i != j.
double diversity(std::span<const data::MotionSequence> samples, int n_pairs, std::mt19937_64& rng);

// Mean absolute difference of first-order joint velocities.
double lvd(const data::MotionSequence& generated, const data::MotionSequence& reference);

// Mean absolute coordinate difference.
double l1_pose(const data::MotionSequence& generated, const data::MotionSequence& reference);

enum class MaskChannel { Face, Body, Background, Foreground };

// IoU of the channel thresholded at 0.5, pooled over all frames. Two empty
// masks count as a perfect match.
double mask_iou(const data::RegionMaskSet& a, const data::RegionMaskSet& b, MaskChannel channel);

// Mean frame-to-frame L1 over all channels and pixels.
double flicker(const data::RegionMaskSet& masks);

}  // namespace pmtk::metrics
