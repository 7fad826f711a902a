#include "followup/training.hpp"

#include <chrono>
#include <cstring>
#include <fstream>

#include "followup/loss.hpp"
#include "followup/optimizer.hpp"

namespace followup {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("training: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (iterations < 0) throw ConfigError("training: iterations must be >= 0");
  if (!(background_weight > 0.0) || !(lesion_weight > 0.0))
    throw ConfigError("training: class weights must be > 0");
  if (augment_range_deg < 0.0 || augment_range_deg > 45.0)
    throw ConfigError("training: augment_range_deg must be in [0, 45]");
}

void write_train_log(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open training log for writing: " + path.string());
  out.setf(std::ios::fmtflags(0), std::ios::floatfield);
  out.precision(9);
  for (const auto& e : log)
    out << "{\"step\": " << e.step << ", \"loss\": " << e.loss << ", \"wall_time\": " << e.wall_time_s
        << "}\n";
}

std::vector<int> slices_with_organ(const MultiSequenceExam& exam) {
  std::vector<int> out;
  const Volume3D& m = exam.organ_mask;
  for (int z = 0; z < m.nz; ++z) {
    const float* s = m.slice(z);
    const std::size_t n = static_cast<std::size_t>(m.ny) * m.nx;
    for (std::size_t i = 0; i < n; ++i)
      if (s[i] != 0.0f) {
        out.push_back(z);
        break;
      }
  }
  return out;
}

std::vector<int> slices_with_lesions(const MultiSequenceExam& exam) {
  if (!exam.annotation) throw DataError("exam '" + exam.exam_id + "' has no annotation");
  std::vector<int> out;
  const Volume3D& a = *exam.annotation;
  const Volume3D& m = exam.organ_mask;
  const std::size_t n = static_cast<std::size_t>(a.ny) * a.nx;
  for (int z = 0; z < a.nz; ++z) {
    const float* as = a.slice(z);
    const float* ms = m.slice(z);
    bool lesion = false, organ = false;
    for (std::size_t i = 0; i < n && !(lesion && organ); ++i) {
      lesion = lesion || as[i] != 0.0f;
      organ = organ || ms[i] != 0.0f;
    }
    if (lesion && organ) out.push_back(z);
  }
  return out;
}

Batch assemble_batch(const std::vector<Patch>& patches, double background_weight, double lesion_weight) {
  if (patches.empty()) throw DataError("assemble_batch: empty patch list");
  const int n = static_cast<int>(patches.size());
  const int ca = patches.front().channels_a, cb = patches.front().channels_b;
  const int hw = kPatchSize;
  Batch b;
  b.in_a.resize(n, ca, hw, hw);
  b.in_b.resize(n, cb, hw, hw);
  b.label.resize(n, 1, hw, hw);
  b.weight.resize(n, 1, hw, hw);
  const std::size_t plane = static_cast<std::size_t>(hw) * hw;
  for (int s = 0; s < n; ++s) {
    const Patch& p = patches[s];
    if (p.channels_a != ca || p.channels_b != cb) throw ShapeError("assemble_batch: mixed channel counts");
    for (int c = 0; c < ca; ++c)
      std::memcpy(b.in_a.plane(s, c), p.input_a.data() + plane * c, plane * sizeof(float));
    for (int c = 0; c < cb; ++c)
      std::memcpy(b.in_b.plane(s, c), p.input_b.data() + plane * c, plane * sizeof(float));
    std::memcpy(b.label.plane(s, 0), p.label.data(), plane * sizeof(float));
    float* w = b.weight.plane(s, 0);
    if (p.weight) {
      std::memcpy(w, p.weight->data(), plane * sizeof(float));
    } else {
      const float bg = static_cast<float>(background_weight), fg = static_cast<float>(lesion_weight);
      for (std::size_t i = 0; i < plane; ++i) w[i] = p.label[i] != 0.0f ? fg : bg;
    }
    // padding outside the source image never contributes to the loss
    for (std::size_t i = 0; i < plane; ++i) w[i] *= p.valid[i];
  }
  return b;
}

namespace {

struct PatchRef {
  int exam = 0;
  int slice = 0;
  int idx = 0;
};

NetworkParams run_training(const NetworkConfig& cfg, const TrainConfig& tcfg, NetworkParams params,
                           const std::vector<const MultiSequenceExam*>& exams,
                           const std::vector<PatchRef>& pool, bool finetune_pool,
                           const Volume3D* weight_map, TrainLog* log) {
  AdamConfig acfg;
  acfg.learning_rate = tcfg.learning_rate;
  auto state = AdamState<float>::zeros_like(params);
  RandomSource rng = RandomSource(tcfg.seed).fork(0x7261696eULL);  // training stream

  CacheHandle<float> cache;
  BasicGradients<float> grads;
  std::vector<Patch> batch_patches;
  const auto t0 = std::chrono::steady_clock::now();

  for (int step = 1; step <= tcfg.iterations; ++step) {
    batch_patches.clear();
    for (int s = 0; s < tcfg.batch_size; ++s) {
      const PatchRef& ref = pool[rng.uniform_int(pool.size())];
      const MultiSequenceExam& exam = *exams[ref.exam];
      Patch p = finetune_pool ? extract_finetune_patch(exam, ref.slice, ref.idx, weight_map)
                              : extract_training_patch(exam, ref.slice, ref.idx, weight_map);
      const double angle = rng.uniform(-tcfg.augment_range_deg, tcfg.augment_range_deg);
      batch_patches.push_back(rotate_patch(p, angle));
    }
    Batch b = assemble_batch(batch_patches, tcfg.background_weight, tcfg.lesion_weight);

    Tensor probs = net_forward(cfg, params, b.in_a, b.in_b, Mode::kTrain, /*dropout_on=*/true, &rng,
                               cache.get(), &params);
    const double loss = weighted_cross_entropy(probs, b.label, b.weight);
    Tensor dlogits = cross_entropy_logit_gradient(probs, b.label, b.weight);
    net_backward(cfg, params, *cache.get(), dlogits, grads);
    adam_step(params, grads, state, acfg);

    if (log) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log->push_back({step, loss, wall});
    }
  }
  return params;
}

}  // namespace

NetworkParams train_base(const NetworkConfig& cfg, const TrainConfig& tcfg,
                         const std::vector<MultiSequenceExam>& exams, TrainLog* log) {
  cfg.validate();
  tcfg.validate();
  if (exams.empty()) throw DataError("train_base: no training exams");

  std::vector<const MultiSequenceExam*> ptrs;
  std::vector<PatchRef> pool;
  for (std::size_t e = 0; e < exams.size(); ++e) {
    if (!exams[e].annotation)
      throw DataError("train_base: exam '" + exams[e].exam_id + "' has no annotation");
    ptrs.push_back(&exams[e]);
    for (int z : slices_with_lesions(exams[e]))
      for (int idx = 0; idx < 25; ++idx) pool.push_back({static_cast<int>(e), z, idx});
  }
  if (pool.empty()) throw DataError("train_base: no lesion-containing slices in the training set");

  NetworkParams params = build_network(cfg, tcfg.seed);
  return run_training(cfg, tcfg, std::move(params), ptrs, pool, /*finetune_pool=*/false, nullptr, log);
}

NetworkParams finetune(const NetworkParams& base, const NetworkConfig& cfg, const TrainConfig& tcfg,
                       const MultiSequenceExam& baseline, const std::vector<int>& slice_set,
                       const Volume3D* weight_map, TrainLog* log) {
  cfg.validate();
  tcfg.validate();
  if (!baseline.annotation) throw DataError("finetune: baseline exam has no annotation");
  if (slice_set.empty()) throw DataError("finetune: empty slice set");
  if (weight_map) require_congruent(*weight_map, baseline.organ_mask, "finetune weight map");

  std::vector<PatchRef> pool;
  for (int z : slice_set) {
    organ_bbox(baseline, z);  // throws EmptyRegionError when the slice misses the organ
    for (int idx = 0; idx < 5; ++idx) pool.push_back({0, z, idx});
  }

  NetworkParams params = base;
  set_trainable(params, cfg, head_layer_names());
  return run_training(cfg, tcfg, std::move(params), {&baseline}, pool, /*finetune_pool=*/true,
                      weight_map, log);
}

}  // namespace followup
