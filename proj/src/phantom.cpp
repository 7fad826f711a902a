#include "followup/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "followup/rng.hpp"

namespace followup {

void PhantomConfig::validate() const {
  if (shape[0] < 4 || shape[1] < 16 || shape[2] < 16) throw ConfigError("phantom: volume too small");
  for (double s : spacing)
    if (!(s > 0.0)) throw ConfigError("phantom: spacing must be positive");
  if (lesions_min < 1 || lesions_max < lesions_min) throw ConfigError("phantom: bad lesion count range");
  if (!(lesion_radius_min_mm > 0.0) || lesion_radius_max_mm < lesion_radius_min_mm)
    throw ConfigError("phantom: bad lesion radius range");
  if (p_new_lesion < 0.0 || p_new_lesion > 1.0 || p_disappear < 0.0 || p_disappear > 1.0)
    throw ConfigError("phantom: probabilities must lie in [0, 1]");
  if (!(noise_sd >= 0.0)) throw ConfigError("phantom: noise_sd must be >= 0");
  if (followup_scale_max < followup_scale_min || !(followup_scale_min > 0.0))
    throw ConfigError("phantom: bad follow-up scale range");
  for (int d = 0; d < 3; ++d) {
    if (organ_semiaxes[d] < 2.0) throw ConfigError("phantom: organ semi-axes too small");
    if (organ_semiaxes[d] > shape[d] / 2.0 - 1.0)
      throw ConfigError("phantom: organ does not fit inside the volume");
  }
}

namespace {

struct Signature {
  double base = 0.0;
  double smoothness = 0.0;
  double amplitude = 0.0;
  double contrast_a = 0.0;
  double contrast_b = 0.0;
};

Signature draw_signature(const PhantomConfig& cfg, RandomSource& rng, bool shifted) {
  Signature s;
  s.base = rng.uniform(cfg.base_intensity_min, cfg.base_intensity_max);
  s.smoothness = rng.uniform(cfg.texture_smoothness_min, cfg.texture_smoothness_max);
  s.amplitude = rng.uniform(cfg.texture_amplitude_min, cfg.texture_amplitude_max);
  s.contrast_a = rng.uniform(cfg.contrast_a_min, cfg.contrast_a_max);
  s.contrast_b = rng.uniform(cfg.contrast_b_min, cfg.contrast_b_max);
  if (shifted) {
    s.base += cfg.shift_base_intensity;
    s.amplitude += cfg.shift_texture_amplitude;
    s.contrast_a *= cfg.shift_contrast_scale;
    s.contrast_b *= cfg.shift_contrast_scale;
  }
  return s;
}

// Separable Gaussian smoothing, truncated at 3 sigma, edge-replicated.
void smooth_axis(std::vector<float>& v, int nz, int ny, int nx, int axis, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    ksum += k[i + radius];
  }
  for (double& w : k) w /= ksum;

  const int dims[3] = {nz, ny, nx};
  const std::size_t strides[3] = {static_cast<std::size_t>(ny) * nx, static_cast<std::size_t>(nx), 1};
  const int n = dims[axis];
  const std::size_t stride = strides[axis];
  std::vector<float> line(n);
  // iterate over all lines along `axis`
  const int d1 = (axis + 1) % 3, d2 = (axis + 2) % 3;
  for (int i1 = 0; i1 < dims[d1]; ++i1)
    for (int i2 = 0; i2 < dims[d2]; ++i2) {
      const std::size_t base = i1 * strides[d1] + i2 * strides[d2];
      for (int i = 0; i < n; ++i) line[i] = v[base + i * stride];
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int o = -radius; o <= radius; ++o) {
          const int j = std::clamp(i + o, 0, n - 1);
          acc += k[o + radius] * line[j];
        }
        v[base + i * stride] = static_cast<float>(acc);
      }
    }
}

Volume3D make_texture_field(const PhantomConfig& cfg, double sigma, RandomSource& rng) {
  Volume3D t(cfg.shape[0], cfg.shape[1], cfg.shape[2], cfg.spacing);
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  smooth_axis(t.data, t.nz, t.ny, t.nx, 0, std::max(0.5, sigma * cfg.spacing[1] / cfg.spacing[0]));
  smooth_axis(t.data, t.nz, t.ny, t.nx, 1, sigma);
  smooth_axis(t.data, t.nz, t.ny, t.nx, 2, sigma);
  return t;
}

struct OrganGeom {
  std::array<double, 3> center;
  std::array<double, 3> semiaxes;
};

bool inside_ellipsoid(const OrganGeom& g, double z, double y, double x) {
  const double dz = (z - g.center[0]) / g.semiaxes[0];
  const double dy = (y - g.center[1]) / g.semiaxes[1];
  const double dx = (x - g.center[2]) / g.semiaxes[2];
  return dz * dz + dy * dy + dx * dx <= 1.0;
}

Volume3D rasterize_organ(const PhantomConfig& cfg, const OrganGeom& g) {
  Volume3D m(cfg.shape[0], cfg.shape[1], cfg.shape[2], cfg.spacing);
  for (int z = 0; z < m.nz; ++z)
    for (int y = 0; y < m.ny; ++y)
      for (int x = 0; x < m.nx; ++x)
        if (inside_ellipsoid(g, z, y, x)) m.at(z, y, x) = 1.0f;
  return m;
}

Volume3D rasterize_lesions(const PhantomConfig& cfg, const std::vector<LesionSpec>& lesions) {
  Volume3D m(cfg.shape[0], cfg.shape[1], cfg.shape[2], cfg.spacing);
  for (const auto& l : lesions) {
    const int z0 = std::max(0, static_cast<int>(std::floor(l.center[0] - l.semiaxes[0])));
    const int z1 = std::min(m.nz - 1, static_cast<int>(std::ceil(l.center[0] + l.semiaxes[0])));
    const int y0 = std::max(0, static_cast<int>(std::floor(l.center[1] - l.semiaxes[1])));
    const int y1 = std::min(m.ny - 1, static_cast<int>(std::ceil(l.center[1] + l.semiaxes[1])));
    const int x0 = std::max(0, static_cast<int>(std::floor(l.center[2] - l.semiaxes[2])));
    const int x1 = std::min(m.nx - 1, static_cast<int>(std::ceil(l.center[2] + l.semiaxes[2])));
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dz = (z - l.center[0]) / l.semiaxes[0];
          const double dy = (y - l.center[1]) / l.semiaxes[1];
          const double dx = (x - l.center[2]) / l.semiaxes[2];
          if (dz * dz + dy * dy + dx * dx <= 1.0) m.at(z, y, x) = 1.0f;
        }
  }
  return m;
}

// The lesion (with a one-voxel safety margin) must lie inside the organ:
// conservative corner-box bound on the organ's quadratic form.
bool lesion_fits(const OrganGeom& organ, const LesionSpec& l) {
  double q = 0.0;
  for (int d = 0; d < 3; ++d) {
    const double r = (std::abs(l.center[d] - organ.center[d]) + l.semiaxes[d] + 1.0) / organ.semiaxes[d];
    q += r * r;
  }
  return q <= 1.0;
}

bool lesions_disjoint(const LesionSpec& a, const LesionSpec& b, const std::array<double, 3>& spacing) {
  double dist_mm = 0.0;
  for (int d = 0; d < 3; ++d) {
    const double dd = (a.center[d] - b.center[d]) * spacing[d];
    dist_mm += dd * dd;
  }
  double ra = 0.0, rb = 0.0;
  for (int d = 0; d < 3; ++d) {
    ra = std::max(ra, a.semiaxes[d] * spacing[d]);
    rb = std::max(rb, b.semiaxes[d] * spacing[d]);
  }
  return std::sqrt(dist_mm) > ra + rb + 1.0;
}

LesionSpec place_lesion(const PhantomConfig& cfg, const OrganGeom& organ,
                        const std::vector<LesionSpec>& existing, RandomSource& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double r_mm = rng.uniform(cfg.lesion_radius_min_mm, cfg.lesion_radius_max_mm);
    LesionSpec l;
    for (int d = 0; d < 3; ++d) l.semiaxes[d] = r_mm * rng.uniform(0.8, 1.25) / cfg.spacing[d];
    for (int d = 0; d < 3; ++d)
      l.center[d] = organ.center[d] + rng.uniform(-1.0, 1.0) * (organ.semiaxes[d] - l.semiaxes[d] - 1.0);
    if (!lesion_fits(organ, l)) continue;
    bool clash = false;
    for (const auto& e : existing) clash = clash || !lesions_disjoint(l, e, cfg.spacing);
    if (clash) continue;
    return l;
  }
  throw GenerationError("phantom: could not place a lesion after 100 attempts");
}

// Renders one exam: channels are different but deterministic functions of
// the same anatomy (texture field + lesions).
MultiSequenceExam render_exam(const PhantomConfig& cfg, const Signature& sig, const Volume3D& texture,
                              const std::array<int, 3>& shift, const OrganGeom& organ,
                              const std::vector<LesionSpec>& lesions, RandomSource& noise_rng,
                              std::vector<Volume3D>* clean_out) {
  MultiSequenceExam e;
  const int nz = cfg.shape[0], ny = cfg.shape[1], nx = cfg.shape[2];

  Volume3D organ_mask = rasterize_organ(cfg, organ);
  Volume3D lesion_mask = rasterize_lesions(cfg, lesions);

  // texture sampled under the rigid shift, edge-replicated
  auto tex_at = [&](int z, int y, int x) -> double {
    const int zz = std::clamp(z - shift[0], 0, nz - 1);
    const int yy = std::clamp(y - shift[1], 0, ny - 1);
    const int xx = std::clamp(x - shift[2], 0, nx - 1);
    return texture.at(zz, yy, xx);
  };

  const double bg_level = sig.base - 4.0;
  auto render_channel = [&](int which) {
    Volume3D v(nz, ny, nx, cfg.spacing);
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
          const bool organ_vox = organ_mask.at(z, y, x) != 0.0f;
          const bool lesion_vox = lesion_mask.at(z, y, x) != 0.0f;
          const double t = tex_at(z, y, x);
          double val;
          switch (which) {
            case 0:  // seq A, channel 0: plain anatomy + bright lesions
              val = organ_vox ? sig.base + sig.amplitude * t + sig.contrast_a * lesion_vox
                              : bg_level + 0.4 * t;
              break;
            case 1:  // seq A, channel 1: weaker enhancement phase
              val = organ_vox ? sig.base + sig.amplitude * t + 0.6 * sig.contrast_a * lesion_vox
                              : bg_level + 0.4 * t;
              break;
            default:  // seq B: nonlinear rendering, dark lesions
              val = organ_vox
                        ? 0.7 * sig.base + sig.amplitude * std::tanh(t) + sig.contrast_b * lesion_vox
                        : 0.7 * bg_level + 0.3 * t;
              break;
          }
          v.at(z, y, x) = static_cast<float>(val);
        }
    return v;
  };

  e.seq_a.sequence_id = "synthA";
  e.seq_b.sequence_id = "synthB";
  for (int which : {0, 1, 2}) {
    Volume3D clean = render_channel(which);
    if (clean_out) clean_out->push_back(clean);
    Volume3D noisy = clean;
    for (auto& v : noisy.data) v = static_cast<float>(v + noise_rng.normal(0.0, cfg.noise_sd));
    if (which < 2)
      e.seq_a.channels.push_back(std::move(noisy));
    else
      e.seq_b.channels.push_back(std::move(noisy));
  }
  e.organ_mask = std::move(organ_mask);
  e.annotation = std::move(lesion_mask);
  return e;
}

}  // namespace

PatientStudy generate_patient(const PhantomConfig& cfg, std::uint64_t patient_seed, bool shifted_cohort,
                              PhantomTrace* trace) {
  cfg.validate();
  RandomSource rng = RandomSource(cfg.seed).fork(0x70617469ULL).fork(patient_seed);

  const Signature sig = draw_signature(cfg, rng, shifted_cohort);

  OrganGeom organ;
  for (int d = 0; d < 3; ++d) {
    organ.semiaxes[d] = cfg.organ_semiaxes[d] * rng.uniform(0.92, 1.08);
    organ.semiaxes[d] = std::min(organ.semiaxes[d], cfg.shape[d] / 2.0 - 1.0);
    organ.center[d] = cfg.shape[d] / 2.0 + rng.uniform(-1.5, 1.5);
  }

  Volume3D texture = make_texture_field(cfg, sig.smoothness, rng);
  // standardize the texture over the organ so contrasts are in SD units
  {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (int z = 0; z < texture.nz; ++z)
      for (int y = 0; y < texture.ny; ++y)
        for (int x = 0; x < texture.nx; ++x)
          if (inside_ellipsoid(organ, z, y, x)) {
            const double v = texture.at(z, y, x);
            sum += v;
            sq += v * v;
            ++n;
          }
    const double mean = sum / static_cast<double>(n);
    const double sd = std::sqrt(std::max(1e-12, sq / static_cast<double>(n) - mean * mean));
    for (auto& v : texture.data) v = static_cast<float>((v - mean) / sd);
  }

  const int n_lesions =
      cfg.lesions_min + static_cast<int>(rng.uniform_int(cfg.lesions_max - cfg.lesions_min + 1));
  std::vector<LesionSpec> base_lesions;
  for (int i = 0; i < n_lesions; ++i) base_lesions.push_back(place_lesion(cfg, organ, base_lesions, rng));

  // follow-up: evolve lesions, then rigidly shift everything
  std::array<int, 3> shift;
  for (int d = 0; d < 3; ++d)
    shift[d] = static_cast<int>(rng.uniform_int(2 * cfg.max_shift_vox + 1)) - cfg.max_shift_vox;

  std::vector<LesionSpec> fu_lesions;
  for (const auto& l : base_lesions) {
    if (rng.uniform() < cfg.p_disappear) continue;
    LesionSpec s = l;
    const double scale = rng.uniform(cfg.followup_scale_min, cfg.followup_scale_max);
    for (int d = 0; d < 3; ++d) s.semiaxes[d] *= scale;
    if (!lesion_fits(organ, s))
      for (int d = 0; d < 3; ++d) s.semiaxes[d] = l.semiaxes[d];  // keep original size if it no longer fits
    fu_lesions.push_back(s);
  }
  if (rng.uniform() < cfg.p_new_lesion || fu_lesions.empty())
    fu_lesions.push_back(place_lesion(cfg, organ, fu_lesions, rng));

  OrganGeom fu_organ = organ;
  for (int d = 0; d < 3; ++d) fu_organ.center[d] += shift[d];
  std::vector<LesionSpec> fu_lesions_shifted = fu_lesions;
  for (auto& l : fu_lesions_shifted)
    for (int d = 0; d < 3; ++d) l.center[d] += shift[d];

  PatientStudy study;
  study.patient_id = "phantom" + std::to_string(patient_seed);

  RandomSource noise_base = rng.fork(0xb0);
  RandomSource noise_fu = rng.fork(0xf1);
  std::vector<Volume3D>* clean_base = nullptr;
  std::vector<Volume3D>* clean_fu = nullptr;
  if (trace) {
    trace->baseline_lesions = base_lesions;
    trace->followup_lesions = fu_lesions_shifted;
    trace->followup_shift = shift;
    trace->baseline_clean.clear();
    trace->followup_clean.clear();
    clean_base = &trace->baseline_clean;
    clean_fu = &trace->followup_clean;
  }

  study.baseline = render_exam(cfg, sig, texture, {0, 0, 0}, organ, base_lesions, noise_base, clean_base);
  study.baseline.exam_id = study.patient_id + "_baseline";
  study.baseline.patient_id = study.patient_id;
  study.baseline.timepoint = Timepoint::kBaseline;

  study.followup =
      render_exam(cfg, sig, texture, shift, fu_organ, fu_lesions_shifted, noise_fu, clean_fu);
  study.followup.exam_id = study.patient_id + "_followup";
  study.followup.patient_id = study.patient_id;
  study.followup.timepoint = Timepoint::kFollowup;

  study.validate();
  return study;
}

PhantomCohort generate_cohort(const PhantomConfig& cfg, int n_train, int n_test, std::uint64_t seed) {
  if (n_train < 1 || n_test < 1) throw ConfigError("generate_cohort: need at least one patient per split");
  PhantomConfig c = cfg;
  c.seed = seed;
  PhantomCohort cohort;
  for (int i = 0; i < n_train; ++i) {
    PatientStudy s = generate_patient(c, 1000 + i, /*shifted_cohort=*/false);
    MultiSequenceExam e = std::move(s.baseline);
    e.exam_id = "train" + std::to_string(i);
    e.patient_id = e.exam_id;
    cohort.train.push_back(std::move(e));
  }
  for (int i = 0; i < n_test; ++i) {
    PatientStudy s = generate_patient(c, 2000 + i, /*shifted_cohort=*/true);
    const std::string pid = "patient" + std::to_string(i);
    s.patient_id = pid;
    s.baseline.patient_id = pid;
    s.baseline.exam_id = pid + "_baseline";
    s.followup.patient_id = pid;
    s.followup.exam_id = pid + "_followup";
    cohort.test.push_back(std::move(s));
  }
  return cohort;
}

}  // namespace followup
