#include "followup/patches.hpp"

#include <algorithm>
#include <cmath>

namespace followup {
namespace {

constexpr int kP = kPatchSize;
constexpr std::size_t kPlane = static_cast<std::size_t>(kP) * kP;

// Anchor positions for g tile origins spanning [lo, hi - kP + 1]; when the
// box is narrower than one tile all anchors collapse onto its center.
int grid_anchor(int lo, int hi, int steps, int i) {
  const int a0 = lo;
  const int a1 = hi - kP + 1;
  if (a1 <= a0) return (a0 + a1) / 2;  // box narrower than one tile: center it
  const double t = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
  return static_cast<int>(std::llround(a0 + t * (a1 - a0)));
}

int clamp_anchor(int a, int image_extent) {
  return std::clamp(a, 0, std::max(0, image_extent - kP));
}

// Copies one kP x kP tile out of a volume slice; areas outside the image
// are filled with 0.
void copy_tile(const Volume3D& v, int slice, int y0, int x0, float* out) {
  std::fill(out, out + kPlane, 0.0f);
  const int ylo = std::max(0, -y0), yhi = std::min(kP, v.ny - y0);
  const int xlo = std::max(0, -x0), xhi = std::min(kP, v.nx - x0);
  if (ylo >= yhi || xlo >= xhi) return;
  const float* src = v.slice(slice);
  for (int y = ylo; y < yhi; ++y) {
    const float* row = src + static_cast<std::size_t>(y0 + y) * v.nx + (x0 + xlo);
    std::copy(row, row + (xhi - xlo), out + static_cast<std::size_t>(y) * kP + xlo);
  }
}

Patch make_patch(const MultiSequenceExam& exam, int slice, int y0, int x0, const Volume3D* weight_map) {
  if (!exam.annotation) throw DataError("patch extraction requires an annotated exam");
  Patch p;
  p.slice = slice;
  p.y0 = y0;
  p.x0 = x0;
  p.channels_a = exam.seq_a.n_channels();
  p.channels_b = exam.seq_b.n_channels();
  p.input_a.resize(kPlane * p.channels_a);
  p.input_b.resize(kPlane * p.channels_b);
  p.label.resize(kPlane);
  p.valid.resize(kPlane);
  for (int c = 0; c < p.channels_a; ++c)
    copy_tile(exam.seq_a.channels[c], slice, y0, x0, p.input_a.data() + kPlane * c);
  for (int c = 0; c < p.channels_b; ++c)
    copy_tile(exam.seq_b.channels[c], slice, y0, x0, p.input_b.data() + kPlane * c);
  copy_tile(*exam.annotation, slice, y0, x0, p.label.data());
  if (weight_map) {
    p.weight.emplace(kPlane);
    copy_tile(*weight_map, slice, y0, x0, p.weight->data());
  }
  const Volume3D& ref = exam.organ_mask;
  for (int y = 0; y < kP; ++y)
    for (int x = 0; x < kP; ++x) {
      const int sy = y0 + y, sx = x0 + x;
      p.valid[static_cast<std::size_t>(y) * kP + x] =
          (sy >= 0 && sy < ref.ny && sx >= 0 && sx < ref.nx) ? 1.0f : 0.0f;
    }
  return p;
}

}  // namespace

SliceBBox organ_bbox(const MultiSequenceExam& exam, int slice) {
  const Volume3D& m = exam.organ_mask;
  if (slice < 0 || slice >= m.nz) throw DataError("organ_bbox: slice index out of range");
  SliceBBox b{m.ny, -1, m.nx, -1};
  const float* s = m.slice(slice);
  for (int y = 0; y < m.ny; ++y)
    for (int x = 0; x < m.nx; ++x)
      if (s[static_cast<std::size_t>(y) * m.nx + x] != 0.0f) {
        b.y0 = std::min(b.y0, y);
        b.y1 = std::max(b.y1, y);
        b.x0 = std::min(b.x0, x);
        b.x1 = std::max(b.x1, x);
      }
  if (b.y1 < 0) throw EmptyRegionError("slice " + std::to_string(slice) + " has no organ voxels");
  return b;
}

Patch extract_training_patch(const MultiSequenceExam& exam, int slice, int grid_index,
                             const Volume3D* weight_map) {
  if (grid_index < 0 || grid_index >= 25) throw LookupError("training patch grid index out of range");
  const SliceBBox b = organ_bbox(exam, slice);
  const int iy = grid_index / 5, ix = grid_index % 5;
  const int y0 = clamp_anchor(grid_anchor(b.y0, b.y1, 5, iy), exam.ny());
  const int x0 = clamp_anchor(grid_anchor(b.x0, b.x1, 5, ix), exam.nx());
  return make_patch(exam, slice, y0, x0, weight_map);
}

std::vector<Patch> extract_training_patches(const MultiSequenceExam& exam, int slice,
                                            const Volume3D* weight_map) {
  std::vector<Patch> out;
  out.reserve(25);
  for (int i = 0; i < 25; ++i) out.push_back(extract_training_patch(exam, slice, i, weight_map));
  return out;
}

Patch extract_finetune_patch(const MultiSequenceExam& exam, int slice, int corner_index,
                             const Volume3D* weight_map) {
  if (corner_index < 0 || corner_index >= 5) throw LookupError("fine-tune patch index out of range");
  const SliceBBox b = organ_bbox(exam, slice);
  const int ylo = b.y0, yhi = b.y1 - kP + 1;
  const int xlo = b.x0, xhi = b.x1 - kP + 1;
  int y0, x0;
  switch (corner_index) {
    case 0: y0 = ylo; x0 = xlo; break;
    case 1: y0 = ylo; x0 = xhi; break;
    case 2: y0 = yhi; x0 = xlo; break;
    case 3: y0 = yhi; x0 = xhi; break;
    default: y0 = (ylo + yhi) / 2; x0 = (xlo + xhi) / 2; break;
  }
  y0 = clamp_anchor(y0, exam.ny());
  x0 = clamp_anchor(x0, exam.nx());
  return make_patch(exam, slice, y0, x0, weight_map);
}

std::vector<Patch> extract_finetune_patches(const MultiSequenceExam& exam, int slice,
                                            const Volume3D* weight_map) {
  std::vector<Patch> out;
  out.reserve(5);
  for (int i = 0; i < 5; ++i) out.push_back(extract_finetune_patch(exam, slice, i, weight_map));
  return out;
}

namespace {

void rotate_plane(const float* src, float* dst, double angle_deg, bool nearest) {
  const double rad = angle_deg * (3.14159265358979323846 / 180.0);
  const double c = std::cos(rad), s = std::sin(rad);
  const double ctr = (kP - 1) / 2.0;
  for (int y = 0; y < kP; ++y) {
    for (int x = 0; x < kP; ++x) {
      // inverse map: rotate destination coordinates by -angle about center
      const double dy = y - ctr, dx = x - ctr;
      const double sy = ctr + (c * dy - s * dx);
      const double sx = ctr + (s * dy + c * dx);
      float v = 0.0f;
      if (nearest) {
        const int ny = static_cast<int>(std::llround(sy));
        const int nx = static_cast<int>(std::llround(sx));
        if (ny >= 0 && ny < kP && nx >= 0 && nx < kP) v = src[static_cast<std::size_t>(ny) * kP + nx];
      } else {
        const int fy = static_cast<int>(std::floor(sy));
        const int fx = static_cast<int>(std::floor(sx));
        const double wy = sy - fy, wx = sx - fx;
        double acc = 0.0;
        for (int oy = 0; oy < 2; ++oy)
          for (int ox = 0; ox < 2; ++ox) {
            const int py = fy + oy, px = fx + ox;
            if (py < 0 || py >= kP || px < 0 || px >= kP) continue;
            const double wgt = (oy ? wy : 1.0 - wy) * (ox ? wx : 1.0 - wx);
            acc += wgt * src[static_cast<std::size_t>(py) * kP + px];
          }
        v = static_cast<float>(acc);
      }
      dst[static_cast<std::size_t>(y) * kP + x] = v;
    }
  }
}

}  // namespace

Patch rotate_patch(const Patch& p, double angle_deg) {
  if (angle_deg < -45.0 || angle_deg > 45.0)
    throw DataError("rotate_patch: angle outside [-45, 45] degrees");
  if (angle_deg == 0.0) return p;
  Patch out = p;
  for (int c = 0; c < p.channels_a; ++c)
    rotate_plane(p.input_a.data() + kPlane * c, out.input_a.data() + kPlane * c, angle_deg, false);
  for (int c = 0; c < p.channels_b; ++c)
    rotate_plane(p.input_b.data() + kPlane * c, out.input_b.data() + kPlane * c, angle_deg, false);
  rotate_plane(p.label.data(), out.label.data(), angle_deg, true);
  if (p.weight) rotate_plane(p.weight->data(), out.weight->data(), angle_deg, true);
  rotate_plane(p.valid.data(), out.valid.data(), angle_deg, true);
  return out;
}

}  // namespace followup
