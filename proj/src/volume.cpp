#include "followup/volume.hpp"

#include <cmath>

namespace followup {

void require_congruent(const Volume3D& a, const Volume3D& b, const char* what) {
  if (!a.same_geometry(b)) {
    throw ShapeError(std::string(what) + ": volume shapes differ (" + std::to_string(a.nz) + "x" +
                     std::to_string(a.ny) + "x" + std::to_string(a.nx) + " vs " + std::to_string(b.nz) + "x" +
                     std::to_string(b.ny) + "x" + std::to_string(b.nx) + ")");
  }
}

bool is_binary(const Volume3D& v) {
  for (float x : v.data) {
    if (x != 0.0f && x != 1.0f) return false;
  }
  return true;
}

void require_binary(const Volume3D& v, const char* what) {
  if (!is_binary(v)) throw DataError(std::string(what) + ": volume is not {0,1}-valued");
}

std::size_t count_nonzero(const Volume3D& v) {
  std::size_t n = 0;
  for (float x : v.data) n += (x != 0.0f);
  return n;
}

void SequenceStack::validate() const {
  if (channels.empty()) throw DataError("sequence '" + sequence_id + "' has no channels");
  for (const auto& ch : channels) {
    if (ch.nz < 1 || ch.ny < 1 || ch.nx < 1) throw DataError("sequence '" + sequence_id + "' has an empty channel");
    if (!ch.same_geometry(channels.front()) || ch.spacing != channels.front().spacing)
      throw ShapeError("sequence '" + sequence_id + "' channels disagree on shape or spacing");
    for (float v : ch.data)
      if (!std::isfinite(v)) throw DataError("sequence '" + sequence_id + "' contains non-finite intensities");
  }
}

std::string to_string(Timepoint t) { return t == Timepoint::kBaseline ? "baseline" : "followup"; }

Timepoint timepoint_from_string(const std::string& s) {
  if (s == "baseline") return Timepoint::kBaseline;
  if (s == "followup") return Timepoint::kFollowup;
  throw FormatError("unknown timepoint '" + s + "'");
}

void MultiSequenceExam::validate() const {
  seq_a.validate();
  seq_b.validate();
  require_congruent(seq_a.channels.front(), organ_mask, "exam");
  require_congruent(seq_b.channels.front(), organ_mask, "exam");
  require_binary(organ_mask, "organ mask");
  if (annotation) {
    require_congruent(*annotation, organ_mask, "annotation");
    require_binary(*annotation, "annotation");
  }
}

void PatientStudy::validate() const {
  baseline.validate();
  followup.validate();
  if (baseline.seq_a.n_channels() != followup.seq_a.n_channels() ||
      baseline.seq_b.n_channels() != followup.seq_b.n_channels())
    throw DataError("study " + patient_id + ": baseline and follow-up channel counts differ");
  if (baseline.seq_a.sequence_id != followup.seq_a.sequence_id ||
      baseline.seq_b.sequence_id != followup.seq_b.sequence_id)
    throw DataError("study " + patient_id + ": baseline and follow-up sequence ids differ");
}

Volume3D normalize_intensity(const Volume3D& v, const Volume3D& mask) {
  require_congruent(v, mask, "normalize_intensity");
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask.data[i] != 0.0f) {
      const double x = v.data[i];
      sum += x;
      sq += x * x;
      ++n;
    }
  }
  if (n < 2) throw DataError("normalize_intensity: mask selects fewer than 2 voxels");
  const double mean = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - mean * mean;
  const double sd = std::sqrt(std::max(var, 0.0));
  if (sd <= 0.0) throw DegenerateInputError("normalize_intensity: zero in-mask standard deviation");

  Volume3D out(v.nz, v.ny, v.nx, v.spacing);
  const double inv = 1.0 / sd;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.data[i] = static_cast<float>((v.data[i] - mean) * inv);
  return out;
}

MultiSequenceExam normalize_exam(const MultiSequenceExam& exam) {
  MultiSequenceExam out = exam;
  for (auto& ch : out.seq_a.channels) ch = normalize_intensity(ch, exam.organ_mask);
  for (auto& ch : out.seq_b.channels) ch = normalize_intensity(ch, exam.organ_mask);
  return out;
}

}  // namespace followup
