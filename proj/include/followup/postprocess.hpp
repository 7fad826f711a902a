#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "followup/volume.hpp"

namespace followup {

enum class Task { kDetection, kSegmentation };
std::string to_string(Task t);
Task task_from_string(const std::string& s);

// probs * organ_mask, elementwise.
Volume3D mask_probabilities(const Volume3D& probs, const Volume3D& organ_mask);

// Voxel is foreground iff prob > threshold (strictly).
Volume3D binarize(const Volume3D& probs, double threshold = 0.5);

// Morphological closing (dilation then erosion) with the full 3x3x3 cube;
// voxels outside the volume count as background for both operators.
Volume3D morph_close_3d(const Volume3D& mask);

// Per-slice 2D opening (erosion then dilation) with the 5-voxel plus.
Volume3D morph_open_plus_2d(const Volume3D& mask);

// One 26-connected foreground component.
struct LesionObject {
  int id = 0;
  std::vector<std::size_t> voxels;  // linear indices, ascending
  double volume_cm3 = 0.0;
  int z0 = 0, z1 = 0, y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // inclusive bbox
};

struct LesionObjects {
  int nz = 0, ny = 0, nx = 0;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  std::vector<LesionObject> objects;

  std::size_t total_voxels() const;
};

// Maximal 26-connected components with ids ordered by each component's
// minimal linear voxel index.
LesionObjects connected_components(const Volume3D& mask);

struct PostprocessResult {
  Volume3D binary;
  LesionObjects objects;
};

// mask -> threshold 0.5 -> 3D closing -> (detection only) 2D plus opening
// -> restrict to the organ -> components. Single-voxel lesions survive the
// segmentation task; the opening removes them for detection.
PostprocessResult postprocess_pipeline(const Volume3D& probs, const Volume3D& organ_mask, Task task);

void write_objects_json(const LesionObjects& objects, const std::filesystem::path& path);

}  // namespace followup
