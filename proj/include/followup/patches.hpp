#pragma once

#include <optional>
#include <vector>

#include "followup/volume.hpp"

namespace followup {

// Side length of every training/fine-tuning tile.
inline constexpr int kPatchSize = 128;

// One 2D training sample cut from an exam slice. All planes are
// kPatchSize x kPatchSize. `valid` is 1 where the tile maps to a real
// image pixel and 0 in the zero-padding that appears when the slice is
// smaller than the tile; padded pixels never contribute to the loss.
struct Patch {
  int channels_a = 0, channels_b = 0;
  std::vector<float> input_a;  // channels_a planes
  std::vector<float> input_b;  // channels_b planes
  std::vector<float> label;    // one {0,1} plane
  std::optional<std::vector<float>> weight;
  std::vector<float> valid;
  int slice = 0, y0 = 0, x0 = 0;  // origin of the tile in the source slice
};

// Inclusive 2D bounding box of the organ mask on one slice.
struct SliceBBox {
  int y0, y1, x0, x1;
};

// Throws EmptyRegionError when the slice has no organ voxels.
SliceBBox organ_bbox(const MultiSequenceExam& exam, int slice);

// The 25 tiles of one slice: tile anchors on a deterministic 5x5 grid
// spanning the organ bounding box, clamped to the image. grid_index is
// row-major in [0, 25).
Patch extract_training_patch(const MultiSequenceExam& exam, int slice, int grid_index,
                             const Volume3D* weight_map = nullptr);
std::vector<Patch> extract_training_patches(const MultiSequenceExam& exam, int slice,
                                            const Volume3D* weight_map = nullptr);

// The 4 corner tiles of the organ bounding box plus one centered tile;
// corner_index in [0, 5) with 4 = center. Deterministic.
Patch extract_finetune_patch(const MultiSequenceExam& exam, int slice, int corner_index,
                             const Volume3D* weight_map = nullptr);
std::vector<Patch> extract_finetune_patches(const MultiSequenceExam& exam, int slice,
                                            const Volume3D* weight_map = nullptr);

// Rotates the patch about the tile center: bilinear interpolation for the
// input planes, nearest-neighbour for label/weight/valid, zero fill outside
// the source tile. angle_deg must lie in [-45, 45].
Patch rotate_patch(const Patch& p, double angle_deg);

}  // namespace followup
