#include "followup/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "followup/nifti.hpp"

namespace followup {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw FormatError("bad JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

SequenceStack load_stack(const json& j, const fs::path& base) {
  SequenceStack s;
  s.sequence_id = j.at("sequence_id").get<std::string>();
  for (const auto& p : j.at("channels")) {
    s.channels.push_back(load_volume(base / p.get<std::string>()));
  }
  return s;
}

}  // namespace

MultiSequenceExam load_exam(const fs::path& manifest_path) {
  const json j = read_json(manifest_path);
  const fs::path base = manifest_path.parent_path();
  MultiSequenceExam e;
  try {
    e.exam_id = j.at("exam_id").get<std::string>();
    e.patient_id = j.at("patient_id").get<std::string>();
    e.timepoint = timepoint_from_string(j.at("timepoint").get<std::string>());
    e.seq_a = load_stack(j.at("seq_a"), base);
    e.seq_b = load_stack(j.at("seq_b"), base);
    e.organ_mask = load_volume(base / j.at("organ_mask").get<std::string>());
    if (j.contains("annotation") && !j.at("annotation").is_null())
      e.annotation = load_volume(base / j.at("annotation").get<std::string>());
  } catch (const json::exception& ex) {
    throw FormatError("exam manifest " + manifest_path.string() + ": " + ex.what());
  }
  e.validate();
  return e;
}

fs::path write_exam(const MultiSequenceExam& exam, const fs::path& dir) {
  fs::create_directories(dir);
  json j;
  j["exam_id"] = exam.exam_id;
  j["patient_id"] = exam.patient_id;
  j["timepoint"] = to_string(exam.timepoint);

  auto dump_stack = [&](const SequenceStack& s, const std::string& key) {
    json sj;
    sj["sequence_id"] = s.sequence_id;
    json chans = json::array();
    for (int c = 0; c < s.n_channels(); ++c) {
      const std::string name = exam.exam_id + "_" + key + "_c" + std::to_string(c) + ".nii.gz";
      write_volume(s.channels[c], dir / name);
      chans.push_back(name);
    }
    sj["channels"] = chans;
    j[key] = sj;
  };
  dump_stack(exam.seq_a, "seq_a");
  dump_stack(exam.seq_b, "seq_b");

  const std::string mask_name = exam.exam_id + "_organ_mask.nii.gz";
  write_volume(exam.organ_mask, dir / mask_name);
  j["organ_mask"] = mask_name;
  if (exam.annotation) {
    const std::string ann_name = exam.exam_id + "_annotation.nii.gz";
    write_volume(*exam.annotation, dir / ann_name);
    j["annotation"] = ann_name;
  } else {
    j["annotation"] = nullptr;
  }

  const fs::path manifest = dir / (exam.exam_id + ".exam.json");
  write_json(j, manifest);
  return manifest;
}

CohortManifest CohortManifest::load(const fs::path& path) {
  const json j = read_json(path);
  CohortManifest m;
  try {
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& p : j.at("train_exams")) m.train_exams.push_back(p.get<std::string>());
    for (const auto& s : j.at("test_studies")) {
      m.test_studies.push_back({s.at("patient_id").get<std::string>(),
                                s.at("baseline").get<std::string>(),
                                s.at("followup").get<std::string>()});
    }
  } catch (const json::exception& ex) {
    throw FormatError("cohort manifest " + path.string() + ": " + ex.what());
  }
  return m;
}

void CohortManifest::save(const fs::path& path) const {
  json j;
  j["seed"] = seed;
  j["train_exams"] = train_exams;
  json studies = json::array();
  for (const auto& s : test_studies) {
    studies.push_back({{"patient_id", s.patient_id}, {"baseline", s.baseline}, {"followup", s.followup}});
  }
  j["test_studies"] = studies;
  write_json(j, path);
}

std::vector<MultiSequenceExam> load_train_exams(const fs::path& cohort_path) {
  const CohortManifest m = CohortManifest::load(cohort_path);
  const fs::path base = cohort_path.parent_path();
  std::vector<MultiSequenceExam> exams;
  exams.reserve(m.train_exams.size());
  for (const auto& p : m.train_exams) exams.push_back(load_exam(base / p));
  return exams;
}

PatientStudy load_study(const fs::path& cohort_path, const std::string& patient_id) {
  const CohortManifest m = CohortManifest::load(cohort_path);
  const fs::path base = cohort_path.parent_path();
  for (const auto& s : m.test_studies) {
    if (s.patient_id == patient_id) {
      PatientStudy study;
      study.patient_id = patient_id;
      study.baseline = load_exam(base / s.baseline);
      study.followup = load_exam(base / s.followup);
      study.validate();
      return study;
    }
  }
  throw LookupError("patient '" + patient_id + "' not found in " + cohort_path.string());
}

std::vector<std::string> list_patients(const fs::path& cohort_path) {
  const CohortManifest m = CohortManifest::load(cohort_path);
  std::vector<std::string> out;
  out.reserve(m.test_studies.size());
  for (const auto& s : m.test_studies) out.push_back(s.patient_id);
  return out;
}

}  // namespace followup
