#include "followup/inference.hpp"

#include <cstring>

namespace followup {

namespace {

// Copies a (y0,x0)+(th,tw) window of every channel of one exam slice into a
// single-sample tensor.
void fill_slice_tensor(const SequenceStack& seq, int z, int y0, int x0, int th, int tw, Tensor& t) {
  const int c = seq.n_channels();
  t.resize(1, c, th, tw);
  for (int ch = 0; ch < c; ++ch) {
    const Volume3D& v = seq.channels[ch];
    float* dst = t.plane(0, ch);
    for (int y = 0; y < th; ++y)
      std::memcpy(dst + static_cast<std::size_t>(y) * tw,
                  v.slice(z) + static_cast<std::size_t>(y0 + y) * v.nx + x0, sizeof(float) * tw);
  }
}

std::vector<int> tile_anchors(int dim, int tile, int stride) {
  std::vector<int> anchors;
  if (dim <= tile) {
    anchors.push_back(0);
    return anchors;
  }
  for (int a = 0;; a += stride) {
    if (a + tile >= dim) {
      anchors.push_back(dim - tile);
      break;
    }
    anchors.push_back(a);
  }
  return anchors;
}

}  // namespace

Volume3D predict_probabilities(const NetworkConfig& cfg, const NetworkParams& params,
                               const MultiSequenceExam& exam, bool dropout_on, RandomSource* rng,
                               const InferenceOptions& opts) {
  const Volume3D& ref = exam.organ_mask;
  Volume3D out(ref.nz, ref.ny, ref.nx, ref.spacing);

  const int margin = (cfg.receptive_field() - 1) / 2;
  const bool tiled = opts.tile_px > 0 && (ref.ny > opts.tile_px || ref.nx > opts.tile_px);
  if (tiled && opts.tile_px <= 2 * margin)
    throw ConfigError("inference: tile_px must exceed twice the receptive-field radius (" +
                      std::to_string(2 * margin) + ")");

  Tensor in_a, in_b;
  for (int z = 0; z < ref.nz; ++z) {
    if (opts.skip_non_organ_slices) {
      const float* m = ref.slice(z);
      const std::size_t plane = static_cast<std::size_t>(ref.ny) * ref.nx;
      bool any = false;
      for (std::size_t i = 0; i < plane && !any; ++i) any = m[i] != 0.0f;
      if (!any) continue;
    }

    if (!tiled) {
      fill_slice_tensor(exam.seq_a, z, 0, 0, ref.ny, ref.nx, in_a);
      fill_slice_tensor(exam.seq_b, z, 0, 0, ref.ny, ref.nx, in_b);
      const Tensor probs = net_forward(cfg, params, in_a, in_b, Mode::kInfer, dropout_on, rng);
      std::memcpy(out.slice(z), probs.m.data() + probs.rows(),
                  sizeof(float) * static_cast<std::size_t>(ref.ny) * ref.nx);
      continue;
    }

    const int ty = std::min(opts.tile_px, ref.ny), tx = std::min(opts.tile_px, ref.nx);
    const auto ay = tile_anchors(ref.ny, ty, ty - 2 * margin);
    const auto ax = tile_anchors(ref.nx, tx, tx - 2 * margin);
    for (std::size_t iy = 0; iy < ay.size(); ++iy) {
      for (std::size_t ix = 0; ix < ax.size(); ++ix) {
        fill_slice_tensor(exam.seq_a, z, ay[iy], ax[ix], ty, tx, in_a);
        fill_slice_tensor(exam.seq_b, z, ay[iy], ax[ix], ty, tx, in_b);
        const Tensor probs = net_forward(cfg, params, in_a, in_b, Mode::kInfer, dropout_on, rng);
        // each tile contributes only its interior; border tiles extend to
        // the image edge, matching whole-slice zero padding exactly
        const int cy0 = iy == 0 ? 0 : ay[iy] + margin;
        const int cy1 = iy + 1 == ay.size() ? ref.ny : ay[iy] + ty - margin;
        const int cx0 = ix == 0 ? 0 : ax[ix] + margin;
        const int cx1 = ix + 1 == ax.size() ? ref.nx : ax[ix] + tx - margin;
        const float* lesion = probs.m.data() + probs.rows();  // channel 1
        for (int y = cy0; y < cy1; ++y)
          std::memcpy(out.slice(z) + static_cast<std::size_t>(y) * ref.nx + cx0,
                      lesion + static_cast<std::size_t>(y - ay[iy]) * tx + (cx0 - ax[ix]),
                      sizeof(float) * static_cast<std::size_t>(cx1 - cx0));
      }
    }
  }

  if (opts.mask_output) {
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= ref.data[i];
  }
  return out;
}

}  // namespace followup
