#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "followup/errors.hpp"

namespace followup {

// 3D scalar volume, shape (nz slices, ny rows, nx cols), x fastest.
// Spacing is (dz, dy, dx) in millimetres.
struct Volume3D {
  int nz = 0, ny = 0, nx = 0;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  std::vector<float> data;

  Volume3D() = default;
  Volume3D(int nz_, int ny_, int nx_, std::array<double, 3> spacing_ = {1.0, 1.0, 1.0})
      : nz(nz_), ny(ny_), nx(nx_), spacing(spacing_), data(static_cast<std::size_t>(nz_) * ny_ * nx_, 0.0f) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * ny + y) * nx + x;
  }
  float& at(int z, int y, int x) { return data[index(z, y, x)]; }
  float at(int z, int y, int x) const { return data[index(z, y, x)]; }

  const float* slice(int z) const { return data.data() + static_cast<std::size_t>(z) * ny * nx; }
  float* slice(int z) { return data.data() + static_cast<std::size_t>(z) * ny * nx; }

  bool same_geometry(const Volume3D& o) const {
    return nz == o.nz && ny == o.ny && nx == o.nx;
  }

  // Voxel volume in cubic millimetres.
  double voxel_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }
};

// Throws ShapeError unless a and b have identical shape.
void require_congruent(const Volume3D& a, const Volume3D& b, const char* what);

// True iff every voxel is exactly 0 or 1.
bool is_binary(const Volume3D& v);

// Throws DataError unless v is binary.
void require_binary(const Volume3D& v, const char* what);

std::size_t count_nonzero(const Volume3D& v);

// Channel-stacked volumes of one MR sequence.
struct SequenceStack {
  std::string sequence_id;
  std::vector<Volume3D> channels;

  int n_channels() const { return static_cast<int>(channels.size()); }
  void validate() const;
};

enum class Timepoint { kBaseline, kFollowup };

std::string to_string(Timepoint t);
Timepoint timepoint_from_string(const std::string& s);

// One imaging exam: two co-registered sequences, the organ mask, and an
// optional lesion annotation.
struct MultiSequenceExam {
  std::string exam_id;
  std::string patient_id;
  Timepoint timepoint = Timepoint::kBaseline;
  SequenceStack seq_a;
  SequenceStack seq_b;
  Volume3D organ_mask;
  std::optional<Volume3D> annotation;

  const Volume3D& reference() const { return organ_mask; }
  int nz() const { return organ_mask.nz; }
  int ny() const { return organ_mask.ny; }
  int nx() const { return organ_mask.nx; }

  void validate() const;
};

// Baseline / follow-up exam pair of one patient.
struct PatientStudy {
  std::string patient_id;
  MultiSequenceExam baseline;
  MultiSequenceExam followup;

  void validate() const;
};

// Z-scores v over the voxels selected by mask (population standard
// deviation); voxels outside the mask are mapped by the same affine
// transform. Throws DegenerateInputError when the in-mask deviation is 0
// and DataError when the mask has fewer than two voxels.
Volume3D normalize_intensity(const Volume3D& v, const Volume3D& mask);

// Normalizes every channel of both sequences over the organ mask.
MultiSequenceExam normalize_exam(const MultiSequenceExam& exam);

}  // namespace followup
