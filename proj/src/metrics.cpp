#include "followup/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace followup {

namespace {

void require_same_grid(const LesionObjects& a, const LesionObjects& b) {
  if (a.nz != b.nz || a.ny != b.ny || a.nx != b.nx)
    throw ShapeError("detection_metrics: object sets come from different grids");
}

}  // namespace

DetectionReport detection_metrics(const LesionObjects& pred, const LesionObjects& truth,
                                  double size_threshold_cm3) {
  require_same_grid(pred, truth);
  const std::size_t total = static_cast<std::size_t>(truth.nz) * truth.ny * truth.nx;

  std::vector<std::uint8_t> pred_mask(total, 0), true_mask(total, 0);
  for (const auto& o : pred.objects)
    for (std::size_t v : o.voxels) pred_mask[v] = 1;
  for (const auto& o : truth.objects)
    for (std::size_t v : o.voxels) true_mask[v] = 1;

  DetectionReport r;
  r.size_threshold_cm3 = size_threshold_cm3;
  r.true_detected.reserve(truth.objects.size());
  for (const auto& o : truth.objects) {
    bool det = false;
    for (std::size_t v : o.voxels)
      if (pred_mask[v]) {
        det = true;
        break;
      }
    r.true_detected.push_back(det);
  }
  r.pred_attached.reserve(pred.objects.size());
  for (const auto& o : pred.objects) {
    bool att = false;
    for (std::size_t v : o.voxels)
      if (true_mask[v]) {
        att = true;
        break;
      }
    r.pred_attached.push_back(att);
  }

  const int n_true = static_cast<int>(truth.objects.size());
  const int n_pred = static_cast<int>(pred.objects.size());
  const int n_detected = static_cast<int>(std::count(r.true_detected.begin(), r.true_detected.end(), true));
  const int n_attached = static_cast<int>(std::count(r.pred_attached.begin(), r.pred_attached.end(), true));
  r.fpc = n_pred - n_attached;

  if (n_true > 0) r.tpr = static_cast<double>(n_detected) / n_true;
  r.precision = n_pred > 0 ? static_cast<double>(n_attached) / n_pred : 0.0;
  if (r.tpr.has_value()) {
    const double p = *r.precision, rec = *r.tpr;
    r.f1 = (p + rec) > 0.0 ? 2.0 * p * rec / (p + rec) : 0.0;
  }

  const auto strata = lesion_size_split(truth, r.true_detected, size_threshold_cm3);
  r.small_lesions = strata.first;
  r.large_lesions = strata.second;
  return r;
}

std::pair<SizeStratum, SizeStratum> lesion_size_split(const LesionObjects& truth,
                                                      const std::vector<bool>& detected,
                                                      double threshold_cm3) {
  if (detected.size() != truth.objects.size())
    throw ShapeError("lesion_size_split: detection flags do not match the object list");
  SizeStratum small, large;
  for (std::size_t i = 0; i < truth.objects.size(); ++i) {
    SizeStratum& s = truth.objects[i].volume_cm3 < threshold_cm3 ? small : large;
    ++s.n_true;
    if (detected[i]) ++s.n_detected;
  }
  if (small.n_true > 0) small.tpr = static_cast<double>(small.n_detected) / small.n_true;
  if (large.n_true > 0) large.tpr = static_cast<double>(large.n_detected) / large.n_true;
  return {small, large};
}

double dice(const Volume3D& pred, const Volume3D& annot) {
  require_congruent(pred, annot, "dice");
  std::size_t nx = 0, ny = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.data[i] != 0.0f, b = annot.data[i] != 0.0f;
    nx += a;
    ny += b;
    both += a && b;
  }
  if (nx + ny == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(nx + ny);
}

std::optional<double> avd_percent(const Volume3D& pred, const Volume3D& annot) {
  require_congruent(pred, annot, "avd");
  const double vx = static_cast<double>(count_nonzero(pred));
  const double vy = static_cast<double>(count_nonzero(annot));
  if (vy == 0.0) return std::nullopt;
  return std::abs(vx - vy) / vy * 100.0;
}

namespace {

struct BoundaryPoint {
  double z, y, x;  // millimetres
};

// Foreground voxels with a 6-neighbour background (or volume edge).
std::vector<BoundaryPoint> boundary_voxels(const Volume3D& m) {
  std::vector<BoundaryPoint> pts;
  for (int z = 0; z < m.nz; ++z)
    for (int y = 0; y < m.ny; ++y)
      for (int x = 0; x < m.nx; ++x) {
        if (m.at(z, y, x) == 0.0f) continue;
        bool boundary = false;
        constexpr int kFace[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
        for (const auto& d : kFace) {
          const int zz = z + d[0], yy = y + d[1], xx = x + d[2];
          if (zz < 0 || zz >= m.nz || yy < 0 || yy >= m.ny || xx < 0 || xx >= m.nx ||
              m.at(zz, yy, xx) == 0.0f) {
            boundary = true;
            break;
          }
        }
        if (boundary) pts.push_back({z * m.spacing[0], y * m.spacing[1], x * m.spacing[2]});
      }
  return pts;
}

double directed_p95(const std::vector<BoundaryPoint>& from, const std::vector<BoundaryPoint>& to) {
  std::vector<double> dists;
  dists.reserve(from.size());
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to) {
      const double dz = a.z - b.z, dy = a.y - b.y, dx = a.x - b.x;
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    dists.push_back(std::sqrt(best));
  }
  std::sort(dists.begin(), dists.end());
  const std::size_t n = dists.size();
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  return dists[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace

std::optional<double> hd95_mm(const Volume3D& pred, const Volume3D& annot) {
  require_congruent(pred, annot, "hd95");
  if (pred.spacing != annot.spacing) throw ShapeError("hd95: spacings differ");
  const auto bp = boundary_voxels(pred);
  const auto ba = boundary_voxels(annot);
  if (bp.empty() || ba.empty()) return std::nullopt;
  return std::max(directed_p95(bp, ba), directed_p95(ba, bp));
}

SegmentationReport segmentation_metrics(const Volume3D& pred, const Volume3D& annot) {
  SegmentationReport r;
  r.dice = dice(pred, annot);
  r.avd_percent = avd_percent(pred, annot);
  r.hd95_mm = hd95_mm(pred, annot);
  return r;
}

}  // namespace followup
