#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "followup/network.hpp"
#include "followup/patches.hpp"
#include "followup/volume.hpp"

namespace followup {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 4;
  int iterations = 10000;          // base training default; fine-tuning uses 100
  double background_weight = 1.0;
  double lesion_weight = 5.0;
  double augment_range_deg = 45.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainLogEntry {
  int step = 0;
  double loss = 0.0;
  double wall_time_s = 0.0;
};
using TrainLog = std::vector<TrainLogEntry>;

void write_train_log(const TrainLog& log, const std::filesystem::path& path);  // JSON lines

// Slices of an exam with at least one organ voxel.
std::vector<int> slices_with_organ(const MultiSequenceExam& exam);
// Slices with at least one annotated lesion voxel (and organ present, so a
// patch can be anchored there). Requires an annotation.
std::vector<int> slices_with_lesions(const MultiSequenceExam& exam);

// Trains the network from scratch: tcfg.iterations Adam steps, each drawing
// batch_size patches uniformly from the 25-per-slice training grid over the
// lesion-containing slices of all exams, each patch freshly rotated within
// +-augment_range_deg. Pixel weights come from the class-weight map.
// Deterministic given (cfg, tcfg) and the exams.
NetworkParams train_base(const NetworkConfig& cfg, const TrainConfig& tcfg,
                         const std::vector<MultiSequenceExam>& exams, TrainLog* log = nullptr);

// Patient-specific refinement: only the two head layers train; the patch
// pool is the 5-per-slice corner/center grid over slice_set; pixel weights
// come from weight_map when given, else from the class-weight map. Adam
// moments start fresh. Every frozen tensor stays bit-identical.
NetworkParams finetune(const NetworkParams& base, const NetworkConfig& cfg, const TrainConfig& tcfg,
                       const MultiSequenceExam& baseline, const std::vector<int>& slice_set,
                       const Volume3D* weight_map = nullptr, TrainLog* log = nullptr);

// Assembles patches into the four network input tensors (inputs a/b, label,
// per-pixel loss weights). Exposed for tests and the batch pipeline.
struct Batch {
  Tensor in_a, in_b, label, weight;
};
Batch assemble_batch(const std::vector<Patch>& patches, double background_weight, double lesion_weight);

}  // namespace followup
