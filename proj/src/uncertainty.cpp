#include "followup/uncertainty.hpp"

#include <cmath>

namespace followup {

Volume3D population_sd(const std::vector<Volume3D>& repeats) {
  if (repeats.size() < 2) throw ConfigError("population_sd: need at least 2 repeats");
  const Volume3D& ref = repeats.front();
  std::vector<double> sum(ref.size(), 0.0), sumsq(ref.size(), 0.0);
  for (const Volume3D& p : repeats) {
    require_congruent(p, ref, "population_sd");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double v = p.data[i];
      sum[i] += v;
      sumsq[i] += v * v;
    }
  }
  const double n = static_cast<double>(repeats.size());
  Volume3D sd(ref.nz, ref.ny, ref.nx, ref.spacing);
  for (std::size_t i = 0; i < sd.size(); ++i) {
    const double mean = sum[i] / n;
    const double var = std::max(0.0, sumsq[i] / n - mean * mean);
    sd.data[i] = static_cast<float>(std::sqrt(var));
  }
  return sd;
}

Volume3D mc_probability_sd(const NetworkConfig& cfg, const NetworkParams& params,
                           const MultiSequenceExam& exam,
                           const std::vector<std::uint64_t>& repeat_seeds,
                           const InferenceOptions& opts) {
  if (repeat_seeds.size() < 2) throw ConfigError("mc_probability_sd: need at least 2 repeats");
  std::vector<Volume3D> repeats;
  repeats.reserve(repeat_seeds.size());
  for (const std::uint64_t s : repeat_seeds) {
    RandomSource rng(s);
    repeats.push_back(predict_probabilities(cfg, params, exam, /*dropout_on=*/true, &rng, opts));
  }
  return population_sd(repeats);
}

UncertaintyReport mc_dropout_uncertainty(const NetworkConfig& cfg, const NetworkParams& params,
                                         const MultiSequenceExam& exam, int n_repeats, Task task,
                                         std::uint64_t seed, const InferenceOptions& opts) {
  if (n_repeats < 2) throw ConfigError("mc_dropout_uncertainty: n_repeats must be >= 2");
  const RandomSource root(seed);
  std::vector<std::uint64_t> seeds;
  seeds.reserve(n_repeats);
  for (int r = 0; r < n_repeats; ++r) seeds.push_back(root.fork(0x6d63u + r).seed());

  UncertaintyReport rep;
  rep.n_repeats = n_repeats;
  rep.sd = mc_probability_sd(cfg, params, exam, seeds, opts);

  if (task == Task::kDetection) {
    const Volume3D probs = predict_probabilities(cfg, params, exam, false, nullptr, opts);
    const PostprocessResult post = postprocess_pipeline(probs, exam.organ_mask, task);
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& obj : post.objects.objects)
      for (std::size_t v : obj.voxels) {
        acc += rep.sd.data[v];
        ++n;
      }
    if (n > 0) rep.summary = acc / static_cast<double>(n);
  } else {
    double mx = -1.0;
    bool any = false;
    for (std::size_t i = 0; i < rep.sd.size(); ++i)
      if (exam.organ_mask.data[i] != 0.0f) {
        mx = std::max(mx, static_cast<double>(rep.sd.data[i]));
        any = true;
      }
    if (any) rep.summary = mx;
  }
  return rep;
}

}  // namespace followup
