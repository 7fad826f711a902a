#pragma once

#include <filesystem>
#include <optional>

#include "followup/adaptation.hpp"
#include "followup/network.hpp"
#include "followup/phantom.hpp"
#include "followup/postprocess.hpp"
#include "followup/training.hpp"

namespace followup {

enum class Weighting { kNone, kDetection, kSegmentation };
std::string to_string(Weighting w);
Weighting weighting_from_string(const std::string& s);

// Everything a pipeline run needs, loaded from a TOML (or JSON) file.
struct RunConfig {
  std::uint64_t seed = 0;

  NetworkConfig network;
  TrainConfig training;

  struct Adaptation {
    std::optional<int> n_slices;  // nullopt = all
    SlicePool pool = SlicePool::kLesionSlices;
    Weighting weighting = Weighting::kNone;
    int finetune_iterations = 100;
  } adaptation;

  struct Postprocess {
    Task task = Task::kDetection;
  } postprocess;

  struct Uncertainty {
    int n_repeats = 25;
  } uncertainty;

  struct Predict {
    int tile_px = 0;  // 0 = whole-slice inference
  } predict;

  struct Paths {
    std::filesystem::path data_manifest;
    std::filesystem::path checkpoint_dir = "checkpoints";
    std::filesystem::path output_dir = "output";
  } paths;

  PhantomConfig phantom;
  int phantom_train = 10, phantom_test = 10;

  struct Reproduce {
    std::vector<int> iterations_sweep = {0, 50, 100, 500, 1000};
  } reproduce;
};

// Accepts .toml (a small key/value + [section] subset: strings, numbers,
// booleans, flat arrays, comments) and .json with the same structure.
// Unknown keys and malformed values throw ConfigError naming the field.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace followup
