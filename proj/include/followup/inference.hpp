#pragma once

#include "followup/network.hpp"
#include "followup/volume.hpp"

namespace followup {

struct InferenceOptions {
  // Side length of the square inference tiles; 0 runs each slice whole
  // (the network is fully convolutional). Tiles overlap by the receptive
  // field radius and only their interiors are stitched, so tiled and whole
  // outputs agree.
  int tile_px = 0;
  bool mask_output = true;            // multiply probabilities by the organ mask
  bool skip_non_organ_slices = true;  // slices without organ voxels stay zero
};

// Lesion-class probability volume for an exam, slice by slice. Deterministic
// with dropout_on = false.
Volume3D predict_probabilities(const NetworkConfig& cfg, const NetworkParams& params,
                               const MultiSequenceExam& exam, bool dropout_on = false,
                               RandomSource* rng = nullptr, const InferenceOptions& opts = {});

}  // namespace followup
