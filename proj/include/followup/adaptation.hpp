#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "followup/volume.hpp"

namespace followup {

// Which slices take part in the informative-slice ranking.
enum class SlicePool { kAllOrganSlices, kLesionSlices };
std::string to_string(SlicePool p);
SlicePool slice_pool_from_string(const std::string& s);

struct SliceScore {
  int slice_idx = 0;
  double mean_prob = 0.0;  // mean lesion probability over the slice's organ voxels
};

// One score per eligible slice (organ voxels present; for kLesionSlices also
// lesion voxels present), ranked by |mean_prob - 0.5| ascending with ties
// broken by the lower slice index.
std::vector<SliceScore> score_slices(const Volume3D& lesion_probs, const Volume3D& organ_mask,
                                     SlicePool pool, const Volume3D* annotation = nullptr);

struct SliceSelection {
  std::vector<int> slices;
  bool truncated = false;  // set when fewer slices existed than requested
};

// First n of the ranking; std::nullopt selects every eligible slice in
// original index order.
SliceSelection select_slices(const std::vector<SliceScore>& ranked, std::optional<int> n);

void write_slice_selection(const std::filesystem::path& path, const std::string& exam_id,
                           SlicePool pool, const std::vector<SliceScore>& ranked,
                           const SliceSelection& selection);

// Per-voxel outcome of a post-processed prediction against the annotation.
// A true object is detected iff it overlaps the prediction anywhere; a
// predicted object is attached iff it overlaps the annotation anywhere.
enum class PixelOutcome : std::uint8_t {
  kTN = 0,
  kTP = 1,
  kFNDetected = 2,  // annotated, missed voxel of a detected lesion
  kFNMissed = 3,    // annotated voxel of a completely missed lesion
  kFPAttached = 4,  // false positive touching a detected lesion
  kFPObject = 5,    // false positive object with no true overlap
};

struct OutcomeVolume {
  int nz = 0, ny = 0, nx = 0;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  std::vector<PixelOutcome> v;

  std::size_t size() const { return v.size(); }
};

OutcomeVolume classify_pixels(const Volume3D& pred_binary, const Volume3D& annotation);

// Fine-tuning weight maps from the outcome volume (values per the task):
//   detection:    FN_missed->5, TP->2, FN_detected->0, FP_attached->0, others->1
//   segmentation: FP/FN (all)->5, TP->2, TN->1
Volume3D detection_weight_map(const OutcomeVolume& outcomes);
Volume3D segmentation_weight_map(const OutcomeVolume& outcomes);

}  // namespace followup
