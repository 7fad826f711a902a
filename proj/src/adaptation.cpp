#include "followup/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "followup/postprocess.hpp"

namespace followup {

std::string to_string(SlicePool p) {
  return p == SlicePool::kAllOrganSlices ? "all_organ_slices" : "lesion_slices";
}

SlicePool slice_pool_from_string(const std::string& s) {
  if (s == "all_organ_slices") return SlicePool::kAllOrganSlices;
  if (s == "lesion_slices") return SlicePool::kLesionSlices;
  throw ConfigError("unknown slice pool '" + s + "'");
}

std::vector<SliceScore> score_slices(const Volume3D& lesion_probs, const Volume3D& organ_mask,
                                     SlicePool pool, const Volume3D* annotation) {
  require_congruent(lesion_probs, organ_mask, "score_slices");
  if (pool == SlicePool::kLesionSlices && annotation == nullptr)
    throw DataError("score_slices: lesion_slices pool requires an annotation");
  if (annotation) require_congruent(*annotation, organ_mask, "score_slices annotation");

  std::vector<SliceScore> scores;
  const std::size_t plane = static_cast<std::size_t>(organ_mask.ny) * organ_mask.nx;
  for (int z = 0; z < organ_mask.nz; ++z) {
    const float* m = organ_mask.slice(z);
    const float* p = lesion_probs.slice(z);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      if (m[i] != 0.0f) {
        sum += p[i];
        ++n;
      }
    }
    if (n == 0) continue;
    if (pool == SlicePool::kLesionSlices) {
      const float* a = annotation->slice(z);
      bool lesion = false;
      for (std::size_t i = 0; i < plane && !lesion; ++i) lesion = a[i] != 0.0f;
      if (!lesion) continue;
    }
    scores.push_back({z, sum / static_cast<double>(n)});
  }
  if (scores.empty()) throw DataError("score_slices: no eligible slices");
  std::stable_sort(scores.begin(), scores.end(), [](const SliceScore& a, const SliceScore& b) {
    const double da = std::abs(a.mean_prob - 0.5), db = std::abs(b.mean_prob - 0.5);
    if (da != db) return da < db;
    return a.slice_idx < b.slice_idx;
  });
  return scores;
}

SliceSelection select_slices(const std::vector<SliceScore>& scores, std::optional<int> n) {
  if (scores.empty()) throw DataError("select_slices: empty ranking");
  SliceSelection sel;
  if (!n.has_value()) {
    for (const auto& s : scores) sel.slices.push_back(s.slice_idx);
    std::sort(sel.slices.begin(), sel.slices.end());
    return sel;
  }
  if (*n < 1) throw ConfigError("select_slices: n must be >= 1");
  // re-rank internally so the result does not depend on the input order
  std::vector<SliceScore> ranked = scores;
  std::sort(ranked.begin(), ranked.end(), [](const SliceScore& a, const SliceScore& b) {
    const double da = std::abs(a.mean_prob - 0.5), db = std::abs(b.mean_prob - 0.5);
    if (da != db) return da < db;
    return a.slice_idx < b.slice_idx;
  });
  const int take = std::min<int>(*n, static_cast<int>(ranked.size()));
  sel.truncated = take < *n;
  for (int i = 0; i < take; ++i) sel.slices.push_back(ranked[i].slice_idx);
  return sel;
}

void write_slice_selection(const std::filesystem::path& path, const std::string& exam_id,
                           SlicePool pool, const std::vector<SliceScore>& ranked,
                           const SliceSelection& selection) {
  nlohmann::json r = nlohmann::json::array();
  for (const auto& s : ranked) r.push_back({{"slice", s.slice_idx}, {"mean_prob", s.mean_prob}});
  nlohmann::json j = {{"exam_id", exam_id},
                      {"pool", to_string(pool)},
                      {"ranking", r},
                      {"selected", selection.slices},
                      {"truncated", selection.truncated}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write slice selection: " + path.string());
  out << j.dump(2) << "\n";
}

OutcomeVolume classify_pixels(const Volume3D& pred_binary, const Volume3D& annotation) {
  require_congruent(pred_binary, annotation, "classify_pixels");
  require_binary(pred_binary, "classify_pixels prediction");
  require_binary(annotation, "classify_pixels annotation");

  const LesionObjects pred_objs = connected_components(pred_binary);
  const LesionObjects true_objs = connected_components(annotation);

  // voxel -> detected/attached flags via object membership
  std::vector<std::uint8_t> true_detected_vox(pred_binary.size(), 0);
  std::vector<std::uint8_t> pred_attached_vox(pred_binary.size(), 0);
  for (const auto& t : true_objs.objects) {
    bool detected = false;
    for (std::size_t v : t.voxels)
      if (pred_binary.data[v] != 0.0f) {
        detected = true;
        break;
      }
    if (detected)
      for (std::size_t v : t.voxels) true_detected_vox[v] = 1;
  }
  for (const auto& p : pred_objs.objects) {
    bool attached = false;
    for (std::size_t v : p.voxels)
      if (annotation.data[v] != 0.0f) {
        attached = true;
        break;
      }
    if (attached)
      for (std::size_t v : p.voxels) pred_attached_vox[v] = 1;
  }

  OutcomeVolume out;
  out.nz = pred_binary.nz;
  out.ny = pred_binary.ny;
  out.nx = pred_binary.nx;
  out.spacing = pred_binary.spacing;
  out.v.resize(pred_binary.size());
  for (std::size_t i = 0; i < pred_binary.size(); ++i) {
    const bool pred = pred_binary.data[i] != 0.0f;
    const bool annot = annotation.data[i] != 0.0f;
    PixelOutcome o;
    if (pred && annot) {
      o = PixelOutcome::kTP;
    } else if (!pred && annot) {
      o = true_detected_vox[i] ? PixelOutcome::kFNDetected : PixelOutcome::kFNMissed;
    } else if (pred && !annot) {
      o = pred_attached_vox[i] ? PixelOutcome::kFPAttached : PixelOutcome::kFPObject;
    } else {
      o = PixelOutcome::kTN;
    }
    out.v[i] = o;
  }
  return out;
}

namespace {

Volume3D apply_weight_table(const OutcomeVolume& outcomes, const float table[6]) {
  Volume3D w(outcomes.nz, outcomes.ny, outcomes.nx, outcomes.spacing);
  for (std::size_t i = 0; i < outcomes.size(); ++i)
    w.data[i] = table[static_cast<std::size_t>(outcomes.v[i])];
  return w;
}

}  // namespace

Volume3D detection_weight_map(const OutcomeVolume& outcomes) {
  // TN, TP, FN_detected, FN_missed, FP_attached, FP_object
  static constexpr float kTable[6] = {1.0f, 2.0f, 0.0f, 5.0f, 0.0f, 1.0f};
  return apply_weight_table(outcomes, kTable);
}

Volume3D segmentation_weight_map(const OutcomeVolume& outcomes) {
  static constexpr float kTable[6] = {1.0f, 2.0f, 5.0f, 5.0f, 5.0f, 5.0f};
  return apply_weight_table(outcomes, kTable);
}

}  // namespace followup
