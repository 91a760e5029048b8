#pragma once

// Geometric kernel of the action filter: box overlap, IoU tracklets, keypoint
// L1 motion and the per-frame-pair affine fit used to reject camera motion.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "actionsieve/types.hpp"

namespace actionsieve {

class InsufficientPointsError : public InputError {
 public:
  using InputError::InputError;
};

inline constexpr std::size_t kMinAffinePoints = 3;
inline constexpr std::size_t kMinMotionKeypoints = 3;
inline constexpr double kSingularValueFloor = 1e-10;

// ---------------------------------------------------------------------------
// IoU

inline double compute_iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return a == b ? 1.0 : 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Tracklets

// Links detections across consecutive frames. Between each pair of adjacent
// frames, candidate (tracklet, detection) pairs with IoU >= iou_min are
// accepted greedily by descending IoU; ties go to the lower tracklet id, then
// the lower detection index. A tracklet not matched in a frame is finished.
// Unmatched detections open new tracklets, numbered in encounter order.
inline std::vector<Tracklet> build_tracklets(std::span<const PoseFrame> frames,
                                             double iou_min) {
  std::vector<Tracklet> tracklets;
  std::vector<std::size_t> active;  // indices into `tracklets`

  auto open = [&](const PoseFrame& f, std::size_t det) {
    Tracklet t;
    t.tracklet_id = static_cast<int>(tracklets.size());
    t.entries.push_back({f.frame_index, det, f.persons[det]});
    tracklets.push_back(std::move(t));
    return tracklets.size() - 1;
  };

  for (const PoseFrame& frame : frames) {
    struct Candidate {
      double iou;
      std::size_t track;  // index into tracklets (== tracklet_id)
      std::size_t det;
    };
    std::vector<Candidate> cands;
    for (std::size_t ti : active) {
      const BoundingBox& prev = tracklets[ti].entries.back().detection.bbox;
      for (std::size_t d = 0; d < frame.persons.size(); ++d) {
        const double iou = compute_iou(prev, frame.persons[d].bbox);
        if (iou >= iou_min) cands.push_back({iou, ti, d});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
      if (x.iou != y.iou) return x.iou > y.iou;
      if (x.track != y.track) return x.track < y.track;
      return x.det < y.det;
    });

    std::vector<bool> det_used(frame.persons.size(), false);
    std::vector<std::size_t> next_active;
    std::vector<bool> track_used(tracklets.size(), false);
    for (const Candidate& c : cands) {
      if (track_used[c.track] || det_used[c.det]) continue;
      track_used[c.track] = true;
      det_used[c.det] = true;
      tracklets[c.track].entries.push_back(
          {frame.frame_index, c.det, frame.persons[c.det]});
      next_active.push_back(c.track);
    }
    for (std::size_t d = 0; d < frame.persons.size(); ++d) {
      if (!det_used[d]) next_active.push_back(open(frame, d));
    }
    std::sort(next_active.begin(), next_active.end());
    active = std::move(next_active);
  }
  return tracklets;
}

// ---------------------------------------------------------------------------
// L1 keypoint motion

// Per adjacent entry pair: mean over keypoints visible in both entries
// (confidence >= conf_min) of |dh| + |dw|. nullopt marks a pair with fewer
// than three mutually visible keypoints.
inline std::vector<std::optional<double>> keypoint_motion_l1(
    const Tracklet& tracklet, double conf_min) {
  std::vector<std::optional<double>> out;
  if (tracklet.entries.size() < 2) return out;
  out.reserve(tracklet.entries.size() - 1);
  for (std::size_t i = 0; i + 1 < tracklet.entries.size(); ++i) {
    const auto& a = tracklet.entries[i].detection.keypoints;
    const auto& b = tracklet.entries[i + 1].detection.keypoints;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
      if (a[k].confidence < conf_min || b[k].confidence < conf_min) continue;
      sum += std::abs(b[k].h - a[k].h) + std::abs(b[k].w - a[k].w);
      ++n;
    }
    if (n < kMinMotionKeypoints) {
      out.emplace_back(std::nullopt);
    } else {
      out.emplace_back(sum / static_cast<double>(n));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Affine fit

// Points are (h, w).
struct PointCorrespondence {
  std::vector<Eigen::Vector2d> src;
  std::vector<Eigen::Vector2d> dst;
  // Optional inclusion mask; empty means every pair is used.
  std::vector<bool> include;

  std::size_t included_count() const {
    if (include.empty()) return src.size();
    return static_cast<std::size_t>(std::count(include.begin(), include.end(), true));
  }
  bool is_included(std::size_t i) const { return include.empty() || include[i]; }
};

// dst ~= A * src + t in normalized (h, w) coordinates.
struct AffineFit {
  Eigen::Matrix2d A = Eigen::Matrix2d::Identity();
  Eigen::Vector2d t = Eigen::Vector2d::Zero();
  // Mean squared point error, (1/n) * sum ||dst_i - (A src_i + t)||^2.
  double residual = 0.0;
  std::size_t n_points = 0;
  // Normal matrix was rank deficient; (A, t) is the minimum-norm solution.
  bool degenerate = false;

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return A * p + t; }

  // Homogeneous 3x3 form with bottom row (0, 0, 1).
  Eigen::Matrix3d homogeneous() const {
    Eigen::Matrix3d T = Eigen::Matrix3d::Identity();
    T.topLeftCorner<2, 2>() = A;
    T.topRightCorner<2, 1>() = t;
    return T;
  }
};

// Least-squares affine fit through the 3x3 normal equations of the design
// matrix rows [h, w, 1], one right-hand side per output coordinate. The
// normal matrix is inverted through its eigen-decomposition; eigenvalues
// below kSingularValueFloor are treated as zero, which gives the
// minimum-norm solution for collinear or coincident points.
inline AffineFit fit_affine(const PointCorrespondence& corr) {
  if (corr.src.size() != corr.dst.size())
    throw InputError("correspondence size mismatch: " +
                     std::to_string(corr.src.size()) + " src vs " +
                     std::to_string(corr.dst.size()) + " dst");
  if (!corr.include.empty() && corr.include.size() != corr.src.size())
    throw InputError("inclusion mask size mismatch");
  const std::size_t n = corr.included_count();
  if (n < kMinAffinePoints)
    throw InsufficientPointsError("affine fit needs at least 3 points, got " +
                                  std::to_string(n));

  Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
  Eigen::Matrix<double, 3, 2> rhs = Eigen::Matrix<double, 3, 2>::Zero();
  for (std::size_t i = 0; i < corr.src.size(); ++i) {
    if (!corr.is_included(i)) continue;
    const Eigen::Vector3d x(corr.src[i].x(), corr.src[i].y(), 1.0);
    normal.noalias() += x * x.transpose();
    rhs.noalias() += x * corr.dst[i].transpose();
  }

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(normal);
  const Eigen::Vector3d& lambda = eig.eigenvalues();
  Eigen::Vector3d inv = Eigen::Vector3d::Zero();
  bool degenerate = false;
  for (int k = 0; k < 3; ++k) {
    if (lambda(k) > kSingularValueFloor) {
      inv(k) = 1.0 / lambda(k);
    } else {
      degenerate = true;
    }
  }
  const Eigen::Matrix3d& V = eig.eigenvectors();
  const Eigen::Matrix<double, 3, 2> params =
      V * inv.asDiagonal() * (V.transpose() * rhs);

  AffineFit fit;
  fit.A = params.topRows<2>().transpose();
  fit.t = params.row(2).transpose();
  fit.n_points = n;
  fit.degenerate = degenerate;

  double sse = 0.0;
  for (std::size_t i = 0; i < corr.src.size(); ++i) {
    if (!corr.is_included(i)) continue;
    sse += (corr.dst[i] - fit.apply(corr.src[i])).squaredNorm();
  }
  fit.residual = sse / static_cast<double>(n);
  return fit;
}

// ---------------------------------------------------------------------------
// Clip-level residual

enum class FitScope {
  pooled,        // one affine per frame pair over every tracked person
  per_tracklet,  // one affine per tracklet, residuals averaged per pair
};

struct AffineResidual {
  // Mean of the per-pair residuals; nullopt when no pair could be fitted.
  std::optional<double> value;
  std::vector<std::optional<double>> per_pair;
  std::size_t pairs_fitted = 0;
  std::size_t pairs_skipped = 0;
  std::size_t degenerate_pairs = 0;

  bool undecidable() const { return !value.has_value(); }
};

namespace detail {

inline void add_visible_keypoints(const PersonDetection& a,
                                  const PersonDetection& b, double conf_min,
                                  PointCorrespondence& corr) {
  for (std::size_t k = 0; k < kNumKeypoints; ++k) {
    const Keypoint& p = a.keypoints[k];
    const Keypoint& q = b.keypoints[k];
    if (p.confidence < conf_min || q.confidence < conf_min) continue;
    corr.src.emplace_back(p.h, p.w);
    corr.dst.emplace_back(q.h, q.w);
  }
}

}  // namespace detail

// Mean affine residual over adjacent frame pairs. Keypoints are paired through
// the tracklets present in both frames; pairs with fewer than three usable
// points are skipped.
inline AffineResidual clip_affine_residual(std::span<const PoseFrame> frames,
                                           std::span<const Tracklet> tracklets,
                                           double conf_min,
                                           FitScope scope = FitScope::pooled) {
  AffineResidual out;
  if (frames.size() < 2) return out;

  double total = 0.0;
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    const std::int64_t f0 = frames[i].frame_index;
    const std::int64_t f1 = frames[i + 1].frame_index;

    std::optional<double> pair_r;
    bool degenerate = false;
    if (scope == FitScope::pooled) {
      PointCorrespondence corr;
      for (const Tracklet& t : tracklets) {
        const TrackEntry* a = t.at_frame(f0);
        const TrackEntry* b = a ? t.at_frame(f1) : nullptr;
        if (a && b) detail::add_visible_keypoints(a->detection, b->detection, conf_min, corr);
      }
      if (corr.src.size() >= kMinAffinePoints) {
        const AffineFit fit = fit_affine(corr);
        pair_r = fit.residual;
        degenerate = fit.degenerate;
      }
    } else {
      double sum = 0.0;
      std::size_t fitted = 0;
      for (const Tracklet& t : tracklets) {
        const TrackEntry* a = t.at_frame(f0);
        const TrackEntry* b = a ? t.at_frame(f1) : nullptr;
        if (!a || !b) continue;
        PointCorrespondence corr;
        detail::add_visible_keypoints(a->detection, b->detection, conf_min, corr);
        if (corr.src.size() < kMinAffinePoints) continue;
        const AffineFit fit = fit_affine(corr);
        sum += fit.residual;
        degenerate = degenerate || fit.degenerate;
        ++fitted;
      }
      if (fitted > 0) pair_r = sum / static_cast<double>(fitted);
    }

    out.per_pair.push_back(pair_r);
    if (pair_r) {
      total += *pair_r;
      ++out.pairs_fitted;
      if (degenerate) ++out.degenerate_pairs;
    } else {
      ++out.pairs_skipped;
    }
  }
  if (out.pairs_fitted > 0) out.value = total / static_cast<double>(out.pairs_fitted);
  return out;
}

}  // namespace actionsieve
