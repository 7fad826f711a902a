#pragma once

#include <optional>
#include <vector>

#include "followup/postprocess.hpp"
#include "followup/volume.hpp"

namespace followup {

struct SizeStratum {
  int n_true = 0;
  int n_detected = 0;
  std::optional<double> tpr;  // unset for an empty stratum
};

// Object-level detection scores. A true lesion counts as detected when the
// prediction overlaps it by at least one voxel; a predicted object with no
// true overlap is a false positive.
struct DetectionReport {
  std::optional<double> tpr;        // unset when there are no true lesions
  int fpc = 0;                      // false positive objects
  std::optional<double> precision;  // 0 when there are predictions but no hits
  std::optional<double> f1;         // 0 when precision + recall == 0
  std::vector<bool> true_detected;
  std::vector<bool> pred_attached;
  double size_threshold_cm3 = 1.0;
  SizeStratum small_lesions, large_lesions;
};

DetectionReport detection_metrics(const LesionObjects& pred, const LesionObjects& truth,
                                  double size_threshold_cm3 = 1.0);

// Per-stratum detection of true lesions split at threshold_cm3 (strictly
// smaller goes to the small stratum).
std::pair<SizeStratum, SizeStratum> lesion_size_split(const LesionObjects& truth,
                                                      const std::vector<bool>& detected,
                                                      double threshold_cm3);

// 2|X n Y| / (|X| + |Y|); 1 when both masks are empty.
double dice(const Volume3D& pred, const Volume3D& annot);

// |V(X) - V(Y)| / V(Y) * 100, in voxel counts; unset when the annotation is
// empty.
std::optional<double> avd_percent(const Volume3D& pred, const Volume3D& annot);

// Symmetric 95th-percentile boundary distance in millimetres (nearest-rank
// percentile, max of the two directed values); unset when either mask is
// empty.
std::optional<double> hd95_mm(const Volume3D& pred, const Volume3D& annot);

struct SegmentationReport {
  double dice = 0.0;
  std::optional<double> avd_percent;
  std::optional<double> hd95_mm;
};

SegmentationReport segmentation_metrics(const Volume3D& pred, const Volume3D& annot);

}  // namespace followup
