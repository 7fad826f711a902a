#include "followup/postprocess.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace followup {

std::string to_string(Task t) { return t == Task::kDetection ? "detection" : "segmentation"; }

Task task_from_string(const std::string& s) {
  if (s == "detection") return Task::kDetection;
  if (s == "segmentation") return Task::kSegmentation;
  throw ConfigError("unknown task '" + s + "' (expected detection or segmentation)");
}

Volume3D mask_probabilities(const Volume3D& probs, const Volume3D& organ_mask) {
  require_congruent(probs, organ_mask, "mask_probabilities");
  Volume3D out = probs;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= organ_mask.data[i];
  return out;
}

Volume3D binarize(const Volume3D& probs, double threshold) {
  Volume3D out(probs.nz, probs.ny, probs.nx, probs.spacing);
  const float t = static_cast<float>(threshold);
  for (std::size_t i = 0; i < probs.size(); ++i) out.data[i] = probs.data[i] > t ? 1.0f : 0.0f;
  return out;
}

namespace {

// dilate==true: foreground if any cube neighbour is set.
// dilate==false (erode): foreground only if every cube neighbour, including
// the out-of-volume ones (treated as background), is set.
Volume3D morph_cube_3d(const Volume3D& m, bool dilate) {
  Volume3D out(m.nz, m.ny, m.nx, m.spacing);
  for (int z = 0; z < m.nz; ++z)
    for (int y = 0; y < m.ny; ++y)
      for (int x = 0; x < m.nx; ++x) {
        bool hit = !dilate;
        for (int dz = -1; dz <= 1 && hit == !dilate; ++dz)
          for (int dy = -1; dy <= 1 && hit == !dilate; ++dy)
            for (int dx = -1; dx <= 1 && hit == !dilate; ++dx) {
              const int zz = z + dz, yy = y + dy, xx = x + dx;
              const bool inside =
                  zz >= 0 && zz < m.nz && yy >= 0 && yy < m.ny && xx >= 0 && xx < m.nx;
              const bool v = inside && m.at(zz, yy, xx) != 0.0f;
              if (dilate && v) hit = true;
              if (!dilate && !v) hit = false;
            }
        out.at(z, y, x) = hit ? 1.0f : 0.0f;
      }
  return out;
}

constexpr int kPlusOffsets[5][2] = {{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}};

Volume3D morph_plus_2d(const Volume3D& m, bool dilate) {
  Volume3D out(m.nz, m.ny, m.nx, m.spacing);
  for (int z = 0; z < m.nz; ++z) {
    const float* src = m.slice(z);
    float* dst = out.slice(z);
    for (int y = 0; y < m.ny; ++y)
      for (int x = 0; x < m.nx; ++x) {
        bool hit = !dilate;
        for (const auto& o : kPlusOffsets) {
          const int yy = y + o[0], xx = x + o[1];
          const bool inside = yy >= 0 && yy < m.ny && xx >= 0 && xx < m.nx;
          const bool v = inside && src[static_cast<std::size_t>(yy) * m.nx + xx] != 0.0f;
          if (dilate && v) {
            hit = true;
            break;
          }
          if (!dilate && !v) {
            hit = false;
            break;
          }
        }
        dst[static_cast<std::size_t>(y) * m.nx + x] = hit ? 1.0f : 0.0f;
      }
  }
  return out;
}

}  // namespace

Volume3D morph_close_3d(const Volume3D& mask) {
  require_binary(mask, "morph_close_3d");
  return morph_cube_3d(morph_cube_3d(mask, true), false);
}

Volume3D morph_open_plus_2d(const Volume3D& mask) {
  require_binary(mask, "morph_open_plus_2d");
  return morph_plus_2d(morph_plus_2d(mask, false), true);
}

std::size_t LesionObjects::total_voxels() const {
  std::size_t n = 0;
  for (const auto& o : objects) n += o.voxels.size();
  return n;
}

LesionObjects connected_components(const Volume3D& mask) {
  require_binary(mask, "connected_components");
  LesionObjects out;
  out.nz = mask.nz;
  out.ny = mask.ny;
  out.nx = mask.nx;
  out.spacing = mask.spacing;

  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  const double vox_cm3 = mask.voxel_mm3() / 1000.0;

  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (mask.data[start] == 0.0f || seen[start]) continue;
    LesionObject obj;
    obj.id = static_cast<int>(out.objects.size());
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      obj.voxels.push_back(cur);
      const int z = static_cast<int>(cur / (static_cast<std::size_t>(mask.ny) * mask.nx));
      const int rem = static_cast<int>(cur % (static_cast<std::size_t>(mask.ny) * mask.nx));
      const int y = rem / mask.nx, x = rem % mask.nx;
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dz == 0 && dy == 0 && dx == 0) continue;
            const int zz = z + dz, yy = y + dy, xx = x + dx;
            if (zz < 0 || zz >= mask.nz || yy < 0 || yy >= mask.ny || xx < 0 || xx >= mask.nx) continue;
            const std::size_t ni = mask.index(zz, yy, xx);
            if (mask.data[ni] == 0.0f || seen[ni]) continue;
            seen[ni] = 1;
            stack.push_back(ni);
          }
    }
    std::sort(obj.voxels.begin(), obj.voxels.end());
    obj.volume_cm3 = static_cast<double>(obj.voxels.size()) * vox_cm3;
    obj.z0 = mask.nz;
    obj.y0 = mask.ny;
    obj.x0 = mask.nx;
    obj.z1 = obj.y1 = obj.x1 = -1;
    for (std::size_t v : obj.voxels) {
      const int z = static_cast<int>(v / (static_cast<std::size_t>(mask.ny) * mask.nx));
      const int rem = static_cast<int>(v % (static_cast<std::size_t>(mask.ny) * mask.nx));
      const int y = rem / mask.nx, x = rem % mask.nx;
      obj.z0 = std::min(obj.z0, z);
      obj.z1 = std::max(obj.z1, z);
      obj.y0 = std::min(obj.y0, y);
      obj.y1 = std::max(obj.y1, y);
      obj.x0 = std::min(obj.x0, x);
      obj.x1 = std::max(obj.x1, x);
    }
    out.objects.push_back(std::move(obj));
  }
  return out;
}

PostprocessResult postprocess_pipeline(const Volume3D& probs, const Volume3D& organ_mask, Task task) {
  require_congruent(probs, organ_mask, "postprocess_pipeline");
  require_binary(organ_mask, "postprocess organ mask");
  Volume3D binary = morph_close_3d(binarize(mask_probabilities(probs, organ_mask)));
  if (task == Task::kDetection) binary = morph_open_plus_2d(binary);
  // closing can spill outside the organ; predictions stay inside it
  for (std::size_t i = 0; i < binary.size(); ++i) binary.data[i] *= organ_mask.data[i];
  PostprocessResult res;
  res.objects = connected_components(binary);
  res.binary = std::move(binary);
  return res;
}

void write_objects_json(const LesionObjects& objects, const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& o : objects.objects) {
    arr.push_back({{"id", o.id},
                   {"voxel_count", o.voxels.size()},
                   {"volume_cm3", o.volume_cm3},
                   {"bbox", {o.z0, o.z1, o.y0, o.y1, o.x0, o.x1}}});
  }
  nlohmann::json j = {{"n_objects", objects.objects.size()}, {"objects", arr}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write objects JSON: " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace followup
