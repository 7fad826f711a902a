#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "followup/config.hpp"
#include "followup/manifest.hpp"
#include "followup/metrics.hpp"
#include "followup/uncertainty.hpp"

namespace followup {

// One model variant evaluated on every test patient's follow-up scan.
struct VariantSpec {
  std::string name;
  bool finetuned = true;               // false = base model as-is
  std::optional<int> n_slices;         // nullopt = all eligible slices
  SlicePool pool = SlicePool::kLesionSlices;
  Weighting weighting = Weighting::kNone;
  int iterations = 100;
  bool with_uncertainty = false;
};

// Follow-up metrics of one (patient, variant) pair.
struct VariantResult {
  std::string patient_id;
  std::string model;
  std::optional<double> tpr;
  int fpc = 0;
  std::optional<double> f1;
  double dice = 0.0;
  std::optional<double> avd;
  std::optional<double> hd95;
  std::optional<double> uncertainty;
  std::optional<double> small_tpr, large_tpr;
};

struct ExperimentOptions {
  bool write_checkpoints = true;
  bool write_volumes = false;  // probability/binary NIfTIs per prediction
  std::filesystem::path output_dir;
  std::ostream* progress = nullptr;
};

struct ExperimentResult {
  std::vector<VariantResult> rows;  // patient-major, variant order preserved

  std::vector<const VariantResult*> of_variant(const std::string& model) const;
  static double mean(const std::vector<double>& v);
};

// Trains (or loads from the FOLLOWUP_FT_CACHE directory) the base model on
// the cohort's training split.
NetworkParams obtain_base_model(const RunConfig& cfg, const std::vector<MultiSequenceExam>& train_exams,
                                std::ostream* progress, TrainLog* log = nullptr);

// Fine-tunes the base model for one patient under the variant's settings;
// returns the adapted parameters plus the slices that were used.
struct FinetuneOutcome {
  NetworkParams params;
  std::vector<SliceScore> ranking;
  SliceSelection selection;
  std::optional<Volume3D> weight_map;
};
FinetuneOutcome finetune_patient(const RunConfig& cfg, const NetworkParams& base,
                                 const MultiSequenceExam& baseline_raw, const VariantSpec& variant);

// Runs every variant over every test study of the cohort and collects
// follow-up metrics (Dice/AVD/HD95 from the segmentation post-processing,
// TPR/FPC/F1 from the detection post-processing, MC-dropout summary when
// requested).
ExperimentResult run_variants(const RunConfig& cfg, const std::vector<MultiSequenceExam>& train_exams,
                              const std::vector<PatientStudy>& studies,
                              const std::vector<VariantSpec>& variants, const ExperimentOptions& opts);

// Named experiment presets mirroring the study's factor sweeps.
std::vector<VariantSpec> experiment_variants(const std::string& experiment, const RunConfig& cfg);

void write_cohort_csv(const ExperimentResult& result, const std::filesystem::path& path);
void write_summary_csv(const ExperimentResult& result, const std::vector<VariantSpec>& variants,
                       const std::filesystem::path& path);

}  // namespace followup
