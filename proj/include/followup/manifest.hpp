#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "followup/volume.hpp"

namespace followup {

// Loads an exam from its JSON manifest; relative volume paths are resolved
// against the manifest's directory.
MultiSequenceExam load_exam(const std::filesystem::path& manifest_path);

// Writes the exam's volumes as NIfTI files plus a manifest JSON into dir;
// returns the manifest path. File names are derived from the exam id.
std::filesystem::path write_exam(const MultiSequenceExam& exam, const std::filesystem::path& dir);

// Cohort layout on disk: exam manifests for the training split and
// baseline/follow-up pairs for the test split.
struct CohortManifest {
  std::vector<std::string> train_exams;  // manifest paths, relative to the cohort file
  struct Study {
    std::string patient_id;
    std::string baseline;
    std::string followup;
  };
  std::vector<Study> test_studies;
  std::uint64_t seed = 0;

  static CohortManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

std::vector<MultiSequenceExam> load_train_exams(const std::filesystem::path& cohort_path);
PatientStudy load_study(const std::filesystem::path& cohort_path, const std::string& patient_id);
std::vector<std::string> list_patients(const std::filesystem::path& cohort_path);

}  // namespace followup
