// followup-ft: patient-specific fine-tuning pipeline for follow-up lesion
// quantification on synthetic or user-supplied multi-sequence volumes.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "followup/experiment.hpp"
#include "followup/nifti.hpp"

namespace fs = std::filesystem;
using namespace followup;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task;
  int jobs = 0;
};

RunConfig load_config(const CommonArgs& args) {
  if (args.config_path.empty()) throw ConfigError("missing --config");
  RunConfig cfg = load_run_config(args.config_path);
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.training.seed = *args.seed;
    cfg.phantom.seed = *args.seed;
  }
  if (args.task) cfg.postprocess.task = task_from_string(*args.task);
  if (args.jobs > 0) {
#ifdef _OPENMP
    omp_set_num_threads(args.jobs);
#endif
  }
  return cfg;
}

fs::path cohort_path(const RunConfig& cfg) {
  if (!cfg.paths.data_manifest.empty()) return cfg.paths.data_manifest;
  return cfg.paths.output_dir / "cohort" / "cohort.json";
}

fs::path base_checkpoint_path(const RunConfig& cfg) { return cfg.paths.checkpoint_dir / "base.ckpt"; }

NetworkParams load_model(const RunConfig& cfg, const std::string& checkpoint_override) {
  const fs::path path = checkpoint_override.empty() ? base_checkpoint_path(cfg) : fs::path(checkpoint_override);
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.config == cfg.network))
    throw ConfigError("checkpoint " + path.string() + " was built with a different network config");
  return std::move(ck.params);
}

int cmd_gen_phantom(const CommonArgs& common) {
  const RunConfig cfg = load_config(common);
  const fs::path manifest = cohort_path(cfg);
  fs::create_directories(manifest.parent_path());

  const PhantomCohort cohort = generate_cohort(cfg.phantom, cfg.phantom_train, cfg.phantom_test, cfg.seed);
  CohortManifest m;
  m.seed = cfg.seed;
  for (const auto& exam : cohort.train) {
    const fs::path p = write_exam(exam, manifest.parent_path() / "train");
    m.train_exams.push_back(fs::relative(p, manifest.parent_path()).string());
  }
  for (const auto& study : cohort.test) {
    const fs::path dir = manifest.parent_path() / study.patient_id;
    const fs::path pb = write_exam(study.baseline, dir);
    const fs::path pf = write_exam(study.followup, dir);
    m.test_studies.push_back({study.patient_id, fs::relative(pb, manifest.parent_path()).string(),
                              fs::relative(pf, manifest.parent_path()).string()});
  }
  m.save(manifest);
  std::cout << "cohort: " << cohort.train.size() << " training exams, " << cohort.test.size()
            << " test studies -> " << manifest << "\n";
  return 0;
}

int cmd_train_base(const CommonArgs& common) {
  const RunConfig cfg = load_config(common);
  const auto exams = load_train_exams(cohort_path(cfg));
  TrainLog log;
  NetworkParams params = obtain_base_model(cfg, exams, &std::cout, &log);

  fs::create_directories(cfg.paths.checkpoint_dir);
  fs::create_directories(cfg.paths.output_dir);
  save_checkpoint(base_checkpoint_path(cfg), cfg.network, params);
  if (!log.empty()) write_train_log(log, cfg.paths.output_dir / "train_base_log.jsonl");
  std::cout << "checkpoint: " << base_checkpoint_path(cfg) << "\n";
  return 0;
}

VariantSpec variant_from_cli(const RunConfig& cfg, const std::string& n_slices,
                             const std::string& weighting, int iterations) {
  VariantSpec v;
  v.name = "ft";
  v.finetuned = true;
  v.pool = cfg.adaptation.pool;
  v.n_slices = cfg.adaptation.n_slices;
  v.weighting = cfg.adaptation.weighting;
  v.iterations = iterations > 0 ? iterations : cfg.adaptation.finetune_iterations;
  if (!n_slices.empty()) {
    if (n_slices == "all")
      v.n_slices.reset();
    else
      v.n_slices = std::stoi(n_slices);
  }
  if (!weighting.empty()) v.weighting = weighting_from_string(weighting);
  return v;
}

int cmd_select_slices(const CommonArgs& common, const std::string& patient, const std::string& checkpoint,
                      const std::string& n_slices) {
  const RunConfig cfg = load_config(common);
  const PatientStudy study = load_study(cohort_path(cfg), patient);
  const NetworkParams base = load_model(cfg, checkpoint);
  const MultiSequenceExam baseline = normalize_exam(study.baseline);

  const Volume3D probs = predict_probabilities(cfg.network, base, baseline);
  const auto ranked = score_slices(probs, baseline.organ_mask, cfg.adaptation.pool,
                                   baseline.annotation ? &*baseline.annotation : nullptr);
  std::optional<int> n = cfg.adaptation.n_slices;
  if (!n_slices.empty()) {
    if (n_slices == "all")
      n.reset();
    else
      n = std::stoi(n_slices);
  }
  const SliceSelection sel = select_slices(ranked, n);

  fs::create_directories(cfg.paths.output_dir);
  const fs::path out = cfg.paths.output_dir / (patient + "_slices.json");
  write_slice_selection(out, study.baseline.exam_id, cfg.adaptation.pool, ranked, sel);
  std::cout << "slice selection: " << out << "\n";
  return 0;
}

int cmd_finetune(const CommonArgs& common, const std::string& patient, const std::string& checkpoint,
                 const std::string& n_slices, const std::string& weighting, int iterations) {
  const RunConfig cfg = load_config(common);
  const PatientStudy study = load_study(cohort_path(cfg), patient);
  const NetworkParams base = load_model(cfg, checkpoint);
  const VariantSpec variant = variant_from_cli(cfg, n_slices, weighting, iterations);

  const FinetuneOutcome out = finetune_patient(cfg, base, study.baseline, variant);

  fs::create_directories(cfg.paths.checkpoint_dir);
  fs::create_directories(cfg.paths.output_dir);
  const fs::path ckpt = cfg.paths.checkpoint_dir / (patient + "_ft.ckpt");
  save_checkpoint(ckpt, cfg.network, out.params);
  write_slice_selection(cfg.paths.output_dir / (patient + "_slices.json"), study.baseline.exam_id,
                        variant.pool, out.ranking, out.selection);
  if (out.weight_map)
    write_volume(*out.weight_map, cfg.paths.output_dir / (patient + "_weight_map.nii.gz"));
  std::cout << "fine-tuned checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_predict(const CommonArgs& common, const std::string& patient, const std::string& checkpoint,
                const std::string& exam_manifest, const std::string& timepoint) {
  const RunConfig cfg = load_config(common);
  MultiSequenceExam exam;
  std::string tag;
  if (!exam_manifest.empty()) {
    exam = load_exam(exam_manifest);
    tag = exam.exam_id;
  } else {
    if (patient.empty()) throw ConfigError("predict: need --patient or --exam-manifest");
    const PatientStudy study = load_study(cohort_path(cfg), patient);
    exam = timepoint == "baseline" ? study.baseline : study.followup;
    tag = patient;
  }
  const NetworkParams model = load_model(cfg, checkpoint);
  const MultiSequenceExam normalized = normalize_exam(exam);

  InferenceOptions iopts;
  iopts.tile_px = cfg.predict.tile_px;
  const Volume3D probs = predict_probabilities(cfg.network, model, normalized, false, nullptr, iopts);
  const PostprocessResult post = postprocess_pipeline(probs, normalized.organ_mask, cfg.postprocess.task);

  const fs::path dir = cfg.paths.output_dir / "predictions" / tag;
  fs::create_directories(dir);
  write_volume(probs, dir / "prob.nii.gz");
  write_volume(post.binary, dir / "binary.nii.gz");
  write_objects_json(post.objects, dir / "objects.json");
  std::cout << "prediction: " << dir << " (" << post.objects.objects.size() << " objects)\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& common) {
  const RunConfig cfg = load_config(common);
  const CohortManifest m = CohortManifest::load(cohort_path(cfg));
  const fs::path base_dir = cohort_path(cfg).parent_path();

  ExperimentResult result;
  for (const auto& entry : m.test_studies) {
    const MultiSequenceExam followup = load_exam(base_dir / entry.followup);
    if (!followup.annotation)
      throw DataError("evaluate: follow-up exam of " + entry.patient_id + " has no annotation");
    const fs::path pred = cfg.paths.output_dir / "predictions" / entry.patient_id / "prob.nii.gz";
    if (!fs::exists(pred))
      throw DataError("evaluate: missing prediction for exam " + entry.patient_id + " (" + pred.string() +
                      ")");
    const Volume3D probs = load_volume(pred);
    require_congruent(probs, followup.organ_mask, "evaluate");

    VariantResult row;
    row.patient_id = entry.patient_id;
    row.model = "prediction";
    const PostprocessResult seg = postprocess_pipeline(probs, followup.organ_mask, Task::kSegmentation);
    row.dice = dice(seg.binary, *followup.annotation);
    row.avd = avd_percent(seg.binary, *followup.annotation);
    row.hd95 = hd95_mm(seg.binary, *followup.annotation);
    const PostprocessResult det = postprocess_pipeline(probs, followup.organ_mask, Task::kDetection);
    const DetectionReport dr = detection_metrics(det.objects, connected_components(*followup.annotation));
    row.tpr = dr.tpr;
    row.fpc = dr.fpc;
    row.f1 = dr.f1;
    result.rows.push_back(row);
  }
  fs::create_directories(cfg.paths.output_dir);
  const fs::path csv = cfg.paths.output_dir / "evaluation.csv";
  write_cohort_csv(result, csv);
  std::cout << "evaluation: " << csv << "\n";
  return 0;
}

int cmd_uncertainty(const CommonArgs& common, const std::string& patient, const std::string& checkpoint) {
  const RunConfig cfg = load_config(common);
  const PatientStudy study = load_study(cohort_path(cfg), patient);
  const NetworkParams model = load_model(cfg, checkpoint);
  const MultiSequenceExam followup = normalize_exam(study.followup);

  const UncertaintyReport rep = mc_dropout_uncertainty(cfg.network, model, followup,
                                                       cfg.uncertainty.n_repeats, cfg.postprocess.task,
                                                       RandomSource(cfg.seed).fork(0x756ec0de).seed());
  const fs::path dir = cfg.paths.output_dir / "uncertainty";
  fs::create_directories(dir);
  write_volume(rep.sd, dir / (patient + "_sd.nii.gz"));
  nlohmann::json j = {{"patient_id", patient},
                      {"n_repeats", rep.n_repeats},
                      {"task", to_string(cfg.postprocess.task)},
                      {"summary", rep.summary.has_value() ? nlohmann::json(*rep.summary) : nlohmann::json()}};
  std::ofstream out(dir / (patient + "_summary.json"));
  out << j.dump(2) << "\n";
  std::cout << "uncertainty: " << dir / (patient + "_sd.nii.gz") << "\n";
  return 0;
}

int cmd_reproduce(const CommonArgs& common, const std::string& experiment) {
  const RunConfig cfg = load_config(common);
  const fs::path manifest = cohort_path(cfg);
  if (!fs::exists(manifest)) {
    std::cout << "cohort manifest missing; generating phantom cohort first\n";
    cmd_gen_phantom(common);
  }
  const auto train_exams = load_train_exams(manifest);
  std::vector<PatientStudy> studies;
  for (const auto& id : list_patients(manifest)) studies.push_back(load_study(manifest, id));

  const auto variants = experiment_variants(experiment, cfg);
  ExperimentOptions opts;
  opts.output_dir = cfg.paths.output_dir / experiment;
  fs::create_directories(opts.output_dir);
  opts.progress = &std::cout;
  const ExperimentResult result = run_variants(cfg, train_exams, studies, variants, opts);

  write_cohort_csv(result, opts.output_dir / "cohort.csv");
  write_summary_csv(result, variants, opts.output_dir / "summary.csv");
  std::cout << "experiment '" << experiment << "': " << opts.output_dir / "summary.csv" << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patient-specific fine-tuning pipeline for follow-up lesion quantification"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string patient, checkpoint, exam_manifest, timepoint = "followup";
  std::string n_slices, weighting, experiment;
  int iterations = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "TOML or JSON run configuration")->required();
    sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_option("--task", common.task, "detection or segmentation")
        ->check(CLI::IsMember({"detection", "segmentation"}));
    sub->add_option("--jobs", common.jobs, "worker threads for the numeric kernels");
  };

  auto* gen = app.add_subcommand("gen-phantom", "generate the synthetic longitudinal cohort");
  add_common(gen);

  auto* train = app.add_subcommand("train-base", "train the base model on the cohort training split");
  add_common(train);

  auto* select = app.add_subcommand("select-slices", "rank baseline slices by softmax informativeness");
  add_common(select);
  select->add_option("--patient", patient, "patient id")->required();
  select->add_option("--checkpoint", checkpoint, "model checkpoint (default: base)");
  select->add_option("--n-slices", n_slices, "1, 2 or all");

  auto* ft = app.add_subcommand("finetune", "patient-specific fine-tuning on the baseline scan");
  add_common(ft);
  ft->add_option("--patient", patient, "patient id")->required();
  ft->add_option("--checkpoint", checkpoint, "base checkpoint (default: base)");
  ft->add_option("--n-slices", n_slices, "1, 2 or all");
  ft->add_option("--weighting", weighting, "none, detection or segmentation")
      ->check(CLI::IsMember({"none", "detection", "segmentation"}));
  ft->add_option("--iterations", iterations, "fine-tuning iterations");

  auto* pred = app.add_subcommand("predict", "probability + binary masks + objects for one exam");
  add_common(pred);
  pred->add_option("--patient", patient, "patient id from the cohort manifest");
  pred->add_option("--checkpoint", checkpoint, "model checkpoint (default: base)");
  pred->add_option("--exam-manifest", exam_manifest, "explicit exam manifest path");
  pred->add_option("--timepoint", timepoint, "baseline or followup (with --patient)")
      ->check(CLI::IsMember({"baseline", "followup"}));

  auto* eval = app.add_subcommand("evaluate", "score stored predictions against the cohort truth");
  add_common(eval);

  auto* unc = app.add_subcommand("uncertainty", "Monte Carlo dropout uncertainty for one patient");
  add_common(unc);
  unc->add_option("--patient", patient, "patient id")->required();
  unc->add_option("--checkpoint", checkpoint, "model checkpoint (default: base)");

  auto* rep = app.add_subcommand("reproduce", "run a named factor-sweep experiment end to end");
  add_common(rep);
  rep->add_option("--experiment", experiment,
                  "iterations_sweep, slices_sweep, weighting or uncertainty")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_phantom(common);
    if (train->parsed()) return cmd_train_base(common);
    if (select->parsed()) return cmd_select_slices(common, patient, checkpoint, n_slices);
    if (ft->parsed()) return cmd_finetune(common, patient, checkpoint, n_slices, weighting, iterations);
    if (pred->parsed()) return cmd_predict(common, patient, checkpoint, exam_manifest, timepoint);
    if (eval->parsed()) return cmd_evaluate(common);
    if (unc->parsed()) return cmd_uncertainty(common, patient, checkpoint);
    if (rep->parsed()) return cmd_reproduce(common, experiment);
    std::cerr << "error: no command\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
