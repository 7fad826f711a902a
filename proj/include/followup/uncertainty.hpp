#pragma once

#include <optional>

#include "followup/inference.hpp"
#include "followup/postprocess.hpp"

namespace followup {

struct UncertaintyReport {
  Volume3D sd;  // per-voxel standard deviation of the lesion probability
  std::optional<double> summary;
  int n_repeats = 0;
};

// Per-voxel population standard deviation (divide by N) across repeats.
Volume3D population_sd(const std::vector<Volume3D>& repeats);

// Per-voxel population SD of the organ-masked lesion probability over one
// stochastic forward pass per entry of repeat_seeds.
Volume3D mc_probability_sd(const NetworkConfig& cfg, const NetworkParams& params,
                           const MultiSequenceExam& exam,
                           const std::vector<std::uint64_t>& repeat_seeds,
                           const InferenceOptions& opts = {});

// Monte Carlo dropout uncertainty: n_repeats test-phase passes with dropout
// active and per-repeat sub-seeds derived from seed. The summary statistic is
//   detection:    mean SD over the voxels of the (deterministically)
//                 detected objects, unset when nothing is detected;
//   segmentation: max SD over the organ voxels.
UncertaintyReport mc_dropout_uncertainty(const NetworkConfig& cfg, const NetworkParams& params,
                                         const MultiSequenceExam& exam, int n_repeats, Task task,
                                         std::uint64_t seed, const InferenceOptions& opts = {});

}  // namespace followup
