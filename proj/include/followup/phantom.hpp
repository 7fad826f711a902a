#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "followup/volume.hpp"

namespace followup {

// Synthetic longitudinal cohort generator. Each patient owns an appearance
// signature (base intensity, texture field, lesion contrasts) shared by the
// baseline and follow-up exam; the follow-up re-uses the texture field under
// a small rigid shift, evolves the lesions, and adds fresh noise. The test
// cohort draws its signature from a shifted distribution, which opens the
// generalization gap that patient-specific tuning is meant to close.
struct PhantomConfig {
  std::array<int, 3> shape = {32, 96, 96};            // (z, y, x)
  std::array<double, 3> spacing = {2.0, 1.5, 1.5};    // millimetres
  std::array<double, 3> organ_semiaxes = {12.0, 38.0, 38.0};  // voxels

  int lesions_min = 2, lesions_max = 8;
  double lesion_radius_min_mm = 3.0, lesion_radius_max_mm = 15.0;

  // patient signature distributions
  double base_intensity_min = 90.0, base_intensity_max = 110.0;
  double texture_smoothness_min = 1.5, texture_smoothness_max = 3.0;  // voxels
  double texture_amplitude_min = 0.9, texture_amplitude_max = 1.3;
  double contrast_a_min = 2.4, contrast_a_max = 3.2;    // seq A lesion offset, texture-SD units
  double contrast_b_min = -3.2, contrast_b_max = -2.4;  // seq B renders lesions dark

  // follow-up evolution
  double followup_scale_min = 0.5, followup_scale_max = 1.5;
  double p_new_lesion = 0.2, p_disappear = 0.1;
  int max_shift_vox = 2;

  double noise_sd = 1.0;

  // test-cohort signature shift
  double shift_contrast_scale = 0.55;     // multiplies both lesion contrasts
  double shift_texture_amplitude = 0.5;   // added to the texture amplitude
  double shift_base_intensity = 25.0;     // added to the base intensity

  std::uint64_t seed = 0;

  void validate() const;
};

struct LesionSpec {
  std::array<double, 3> center;    // voxels (z, y, x)
  std::array<double, 3> semiaxes;  // voxels
};

// Generation internals exposed for verification.
struct PhantomTrace {
  std::vector<LesionSpec> baseline_lesions, followup_lesions;
  std::array<int, 3> followup_shift = {0, 0, 0};
  // noiseless renderings, ordered seq_a channels then seq_b channels
  std::vector<Volume3D> baseline_clean, followup_clean;
};

// Deterministic in (cfg, patient_seed). shifted_cohort applies the
// test-cohort signature shift. Throws GenerationError when a lesion cannot
// be placed after 100 attempts.
PatientStudy generate_patient(const PhantomConfig& cfg, std::uint64_t patient_seed,
                              bool shifted_cohort = true, PhantomTrace* trace = nullptr);

struct PhantomCohort {
  std::vector<MultiSequenceExam> train;  // single-timepoint annotated exams
  std::vector<PatientStudy> test;        // baseline/follow-up pairs, shifted signature
};

PhantomCohort generate_cohort(const PhantomConfig& cfg, int n_train, int n_test, std::uint64_t seed);

}  // namespace followup
