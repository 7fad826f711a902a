#include "followup/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "followup/nifti.hpp"

namespace followup {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Cache key for the base model: every input that shapes the training result.
std::string base_cache_key(const RunConfig& cfg, std::size_t n_exams) {
  nlohmann::json j = {{"in_a", cfg.network.in_channels_a},
                      {"in_b", cfg.network.in_channels_b},
                      {"pk", cfg.network.pathway_kernels},
                      {"hk", cfg.network.head_kernels},
                      {"dr", cfg.network.dropout_rate},
                      {"dil", cfg.network.dilation_schedule},
                      {"blocks", cfg.network.block_sizes},
                      {"lr", cfg.training.learning_rate},
                      {"bs", cfg.training.batch_size},
                      {"it", cfg.training.iterations},
                      {"bw", cfg.training.background_weight},
                      {"lw", cfg.training.lesion_weight},
                      {"aug", cfg.training.augment_range_deg},
                      {"seed", cfg.seed},
                      {"n_exams", n_exams}};
  std::ostringstream os;
  os << std::hex << fnv1a(j.dump());
  return os.str();
}

double percentile_like(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  return v[std::max<std::size_t>(rank, 1) - 1];
}

void print_opt(std::ostream& os, const std::optional<double>& v) {
  if (v.has_value())
    os << *v;
  else
    os << "nan";
}

}  // namespace

std::vector<const VariantResult*> ExperimentResult::of_variant(const std::string& model) const {
  std::vector<const VariantResult*> out;
  for (const auto& r : rows)
    if (r.model == model) out.push_back(&r);
  return out;
}

double ExperimentResult::mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

NetworkParams obtain_base_model(const RunConfig& cfg, const std::vector<MultiSequenceExam>& train_exams,
                                std::ostream* progress, TrainLog* log) {
  fs::path cache_file;
  if (const char* cache_dir = std::getenv("FOLLOWUP_FT_CACHE"); cache_dir && *cache_dir) {
    cache_file = fs::path(cache_dir) / ("base_" + base_cache_key(cfg, train_exams.size()) + ".ckpt");
    if (fs::exists(cache_file)) {
      if (progress) *progress << "base model: cached checkpoint " << cache_file << "\n";
      return load_checkpoint(cache_file).params;
    }
  }
  if (progress)
    *progress << "base model: training " << cfg.training.iterations << " iterations on "
              << train_exams.size() << " exams\n";
  std::vector<MultiSequenceExam> normalized;
  normalized.reserve(train_exams.size());
  for (const auto& e : train_exams) normalized.push_back(normalize_exam(e));
  NetworkParams params = train_base(cfg.network, cfg.training, normalized, log);
  if (!cache_file.empty()) {
    fs::create_directories(cache_file.parent_path());
    save_checkpoint(cache_file, cfg.network, params);
    if (progress) *progress << "base model: cached to " << cache_file << "\n";
  }
  return params;
}

FinetuneOutcome finetune_patient(const RunConfig& cfg, const NetworkParams& base,
                                 const MultiSequenceExam& baseline_raw, const VariantSpec& variant) {
  const MultiSequenceExam baseline = normalize_exam(baseline_raw);
  if (!baseline.annotation) throw DataError("finetune_patient: baseline has no annotation");

  FinetuneOutcome out;
  const Volume3D probs = predict_probabilities(cfg.network, base, baseline);
  out.ranking = score_slices(probs, baseline.organ_mask, variant.pool,
                             baseline.annotation ? &*baseline.annotation : nullptr);
  out.selection = select_slices(out.ranking, variant.n_slices);

  if (variant.weighting != Weighting::kNone) {
    const Task task = variant.weighting == Weighting::kDetection ? Task::kDetection : Task::kSegmentation;
    const PostprocessResult post = postprocess_pipeline(probs, baseline.organ_mask, task);
    const OutcomeVolume outcomes = classify_pixels(post.binary, *baseline.annotation);
    out.weight_map = variant.weighting == Weighting::kDetection ? detection_weight_map(outcomes)
                                                                : segmentation_weight_map(outcomes);
  }

  TrainConfig ft = cfg.training;
  ft.iterations = variant.iterations;
  ft.seed = RandomSource(cfg.seed).fork(fnv1a(baseline_raw.patient_id + "/" + variant.name)).seed();
  out.params = finetune(base, cfg.network, ft, baseline, out.selection.slices,
                        out.weight_map ? &*out.weight_map : nullptr);
  return out;
}

ExperimentResult run_variants(const RunConfig& cfg, const std::vector<MultiSequenceExam>& train_exams,
                              const std::vector<PatientStudy>& studies,
                              const std::vector<VariantSpec>& variants, const ExperimentOptions& opts) {
  ExperimentResult result;
  const NetworkParams base = obtain_base_model(cfg, train_exams, opts.progress);
  if (opts.write_checkpoints && !opts.output_dir.empty()) {
    fs::create_directories(opts.output_dir / "checkpoints");
    save_checkpoint(opts.output_dir / "checkpoints" / "base.ckpt", cfg.network, base);
  }

  for (const auto& study : studies) {
    const MultiSequenceExam followup = normalize_exam(study.followup);
    const LesionObjects truth = connected_components(*study.followup.annotation);

    for (const auto& variant : variants) {
      const NetworkParams* model = &base;
      NetworkParams tuned;
      if (variant.finetuned) {
        FinetuneOutcome ft = finetune_patient(cfg, base, study.baseline, variant);
        tuned = std::move(ft.params);
        model = &tuned;
        if (opts.write_checkpoints && !opts.output_dir.empty()) {
          save_checkpoint(opts.output_dir / "checkpoints" /
                              (study.patient_id + "_" + variant.name + ".ckpt"),
                          cfg.network, tuned);
        }
      }

      InferenceOptions iopts;
      iopts.tile_px = cfg.predict.tile_px;
      const Volume3D probs = predict_probabilities(cfg.network, *model, followup, false, nullptr, iopts);

      VariantResult row;
      row.patient_id = study.patient_id;
      row.model = variant.name;

      const PostprocessResult seg = postprocess_pipeline(probs, followup.organ_mask, Task::kSegmentation);
      row.dice = dice(seg.binary, *study.followup.annotation);
      row.avd = avd_percent(seg.binary, *study.followup.annotation);
      row.hd95 = hd95_mm(seg.binary, *study.followup.annotation);

      const PostprocessResult det = postprocess_pipeline(probs, followup.organ_mask, Task::kDetection);
      const DetectionReport dr = detection_metrics(det.objects, truth);
      row.tpr = dr.tpr;
      row.fpc = dr.fpc;
      row.f1 = dr.f1;
      row.small_tpr = dr.small_lesions.tpr;
      row.large_tpr = dr.large_lesions.tpr;

      if (variant.with_uncertainty) {
        const std::uint64_t seed =
            RandomSource(cfg.seed).fork(fnv1a("mc/" + study.patient_id + "/" + variant.name)).seed();
        const UncertaintyReport unc = mc_dropout_uncertainty(
            cfg.network, *model, followup, cfg.uncertainty.n_repeats, Task::kDetection, seed);
        row.uncertainty = unc.summary;
      }

      if (opts.write_volumes && !opts.output_dir.empty()) {
        const fs::path dir = opts.output_dir / "predictions" / study.patient_id;
        fs::create_directories(dir);
        write_volume(probs, dir / (variant.name + "_prob.nii.gz"));
        write_volume(seg.binary, dir / (variant.name + "_seg.nii.gz"));
        write_volume(det.binary, dir / (variant.name + "_det.nii.gz"));
      }

      result.rows.push_back(std::move(row));
      if (opts.progress)
        *opts.progress << study.patient_id << " " << variant.name << ": dice="
                       << result.rows.back().dice << "\n";
    }
  }
  return result;
}

std::vector<VariantSpec> experiment_variants(const std::string& experiment, const RunConfig& cfg) {
  std::vector<VariantSpec> v;
  VariantSpec base;
  base.name = "base";
  base.finetuned = false;
  const SlicePool pool = cfg.adaptation.pool;
  const int ft_iters = cfg.adaptation.finetune_iterations;

  if (experiment == "iterations_sweep") {
    v.push_back(base);
    for (int iters : cfg.reproduce.iterations_sweep) {
      if (iters == 0) continue;  // the base row stands in for zero iterations
      VariantSpec s;
      s.name = "ft_iter" + std::to_string(iters);
      s.n_slices = std::nullopt;
      s.pool = pool;
      s.iterations = iters;
      v.push_back(s);
    }
  } else if (experiment == "slices_sweep") {
    v.push_back(base);
    for (int n : {1, 2}) {
      VariantSpec s;
      s.name = "ft_" + std::to_string(n) + "slice";
      s.n_slices = n;
      s.pool = pool;
      s.iterations = ft_iters;
      v.push_back(s);
    }
    VariantSpec lesions;
    lesions.name = "ft_all_lesion_slices";
    lesions.pool = SlicePool::kLesionSlices;
    lesions.iterations = ft_iters;
    v.push_back(lesions);
    VariantSpec organ;
    organ.name = "ft_all_organ_slices";
    organ.pool = SlicePool::kAllOrganSlices;
    organ.iterations = ft_iters;
    v.push_back(organ);
  } else if (experiment == "weighting") {
    v.push_back(base);
    VariantSpec plain;
    plain.name = "ft";
    plain.pool = pool;
    plain.iterations = ft_iters;
    v.push_back(plain);
    VariantSpec weighted;
    weighted.name = "ft_weighted";
    weighted.pool = pool;
    weighted.iterations = ft_iters;
    weighted.weighting =
        cfg.postprocess.task == Task::kDetection ? Weighting::kDetection : Weighting::kSegmentation;
    v.push_back(weighted);
  } else if (experiment == "uncertainty") {
    base.with_uncertainty = true;
    v.push_back(base);
    VariantSpec ft;
    ft.name = "ft";
    ft.pool = pool;
    ft.iterations = ft_iters;
    ft.with_uncertainty = true;
    v.push_back(ft);
  } else {
    throw ConfigError("unknown experiment '" + experiment +
                      "' (expected iterations_sweep, slices_sweep, weighting or uncertainty)");
  }
  return v;
}

void write_cohort_csv(const ExperimentResult& result, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write CSV: " + path.string());
  out << std::setprecision(9);
  out << "patient_id,model,tpr,fpc,f1,dice,avd,hd95,uncertainty\n";
  for (const auto& r : result.rows) {
    out << r.patient_id << "," << r.model << ",";
    print_opt(out, r.tpr);
    out << "," << r.fpc << ",";
    print_opt(out, r.f1);
    out << "," << r.dice << ",";
    print_opt(out, r.avd);
    out << ",";
    print_opt(out, r.hd95);
    out << ",";
    print_opt(out, r.uncertainty);
    out << "\n";
  }
}

void write_summary_csv(const ExperimentResult& result, const std::vector<VariantSpec>& variants,
                       const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write CSV: " + path.string());
  out << std::setprecision(9);
  out << "model,n,median_tpr,iqr_tpr,median_fpc,median_f1,mean_dice,sd_dice,mean_avd,mean_hd95,"
         "mean_uncertainty\n";
  for (const auto& variant : variants) {
    const auto rows = result.of_variant(variant.name);
    std::vector<double> tpr, fpc, f1, dices, avd, hd, unc;
    for (const auto* r : rows) {
      if (r->tpr) tpr.push_back(*r->tpr);
      fpc.push_back(r->fpc);
      if (r->f1) f1.push_back(*r->f1);
      dices.push_back(r->dice);
      if (r->avd) avd.push_back(*r->avd);
      if (r->hd95) hd.push_back(*r->hd95);
      if (r->uncertainty) unc.push_back(*r->uncertainty);
    }
    out << variant.name << "," << rows.size() << ",";
    auto med = [&](std::vector<double>& v) -> std::string {
      if (v.empty()) return "nan";
      std::ostringstream os;
      os << std::setprecision(9) << percentile_like(v, 0.5);
      return os.str();
    };
    auto mean_of = [&](const std::vector<double>& v) -> std::string {
      if (v.empty()) return "nan";
      std::ostringstream os;
      os << std::setprecision(9) << ExperimentResult::mean(v);
      return os.str();
    };
    out << med(tpr) << ",";
    if (tpr.empty())
      out << "nan,";
    else
      out << (percentile_like(tpr, 0.75) - percentile_like(tpr, 0.25)) << ",";
    out << med(fpc) << "," << med(f1) << "," << mean_of(dices) << ",";
    if (dices.empty()) {
      out << "nan,";
    } else {
      const double m = ExperimentResult::mean(dices);
      double acc = 0.0;
      for (double d : dices) acc += (d - m) * (d - m);
      out << std::sqrt(acc / static_cast<double>(dices.size())) << ",";
    }
    out << mean_of(avd) << "," << mean_of(hd) << "," << mean_of(unc) << "\n";
  }
}

}  // namespace followup
