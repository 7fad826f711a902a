#include "followup/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace followup {

using nlohmann::json;

std::string to_string(Weighting w) {
  switch (w) {
    case Weighting::kNone: return "none";
    case Weighting::kDetection: return "detection";
    default: return "segmentation";
  }
}

Weighting weighting_from_string(const std::string& s) {
  if (s == "none") return Weighting::kNone;
  if (s == "detection") return Weighting::kDetection;
  if (s == "segmentation") return Weighting::kSegmentation;
  throw ConfigError("unknown weighting '" + s + "' (expected none, detection or segmentation)");
}

namespace {

// --- minimal TOML subset ----------------------------------------------------

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

json parse_toml_scalar(const std::string& tok, const std::string& where) {
  if (tok.empty()) throw ConfigError("config: empty value for '" + where + "'");
  if (tok.front() == '"') {
    if (tok.size() < 2 || tok.back() != '"')
      throw ConfigError("config: unterminated string for '" + where + "'");
    std::string out;
    for (std::size_t i = 1; i + 1 < tok.size(); ++i) {
      if (tok[i] == '\\' && i + 2 < tok.size()) {
        ++i;
        out += tok[i];
      } else {
        out += tok[i];
      }
    }
    return out;
  }
  if (tok == "true") return true;
  if (tok == "false") return false;
  try {
    std::size_t pos = 0;
    if (tok.find_first_of(".eE") == std::string::npos || (tok.size() > 1 && tok[0] == '0' && tok[1] == 'x')) {
      const long long v = std::stoll(tok, &pos, 0);
      if (pos == tok.size()) return v;
    }
    const double d = std::stod(tok, &pos);
    if (pos == tok.size()) return d;
  } catch (...) {
  }
  throw ConfigError("config: cannot parse value '" + tok + "' for '" + where + "'");
}

json parse_toml_value(const std::string& raw, const std::string& where) {
  const std::string tok = strip(raw);
  if (!tok.empty() && tok.front() == '[') {
    if (tok.back() != ']') throw ConfigError("config: unterminated array for '" + where + "'");
    json arr = json::array();
    std::string inner = tok.substr(1, tok.size() - 2);
    std::string cur;
    bool in_str = false;
    for (char c : inner) {
      if (c == '"') in_str = !in_str;
      if (c == ',' && !in_str) {
        if (!strip(cur).empty()) arr.push_back(parse_toml_scalar(strip(cur), where));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!strip(cur).empty()) arr.push_back(parse_toml_scalar(strip(cur), where));
    return arr;
  }
  return parse_toml_scalar(tok, where);
}

// Strips a trailing comment that is not inside a string or array.
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

json parse_toml(std::istream& in) {
  json root = json::object();
  json* section = &root;
  std::string section_name;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": bad section");
      section_name = strip(line.substr(1, line.size() - 2));
      section = &root;
      std::string part;
      for (std::size_t i = 0; i <= section_name.size(); ++i) {
        if (i == section_name.size() || section_name[i] == '.') {
          if (part.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": bad section");
          section = &((*section)[part]);
          part.clear();
        } else {
          part += section_name[i];
        }
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = strip(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    const std::string where = section_name.empty() ? key : section_name + "." + key;
    (*section)[key] = parse_toml_value(line.substr(eq + 1), where);
  }
  return root;
}

// --- typed extraction --------------------------------------------------------

class Section {
 public:
  Section(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {}

  template <class T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: bad value for '" + prefix_ + key + "'");
    }
    used_.insert(key);
  }

  void get_path(const char* key, std::filesystem::path& out) const {
    std::string s;
    get(key, s);
    if (!s.empty()) out = s;
  }

  template <class T, std::size_t N>
  void get_fixed(const char* key, std::array<T, N>& out) const {
    if (!j_.contains(key)) return;
    const auto& arr = j_.at(key);
    if (!arr.is_array() || arr.size() != N)
      throw ConfigError("config: '" + prefix_ + key + "' must be an array of " + std::to_string(N));
    for (std::size_t i = 0; i < N; ++i) {
      try {
        out[i] = arr[i].get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config: bad element in '" + prefix_ + key + "'");
      }
    }
    used_.insert(key);
  }

  void mark_used(const char* key) const { used_.insert(key); }

  void check_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key()) && !it.value().is_object())
        throw ConfigError("config: unknown field '" + prefix_ + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string prefix_;
  mutable std::set<std::string> used_;
};

json section_of(const json& root, const char* name) {
  if (root.contains(name)) {
    if (!root.at(name).is_object()) throw ConfigError(std::string("config: '") + name + "' must be a table");
    return root.at(name);
  }
  return json::object();
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());

  json root;
  if (path.extension() == ".json") {
    try {
      in >> root;
    } catch (const json::parse_error& e) {
      throw ConfigError("config: bad JSON in " + path.string() + ": " + e.what());
    }
  } else {
    root = parse_toml(in);
  }

  RunConfig cfg;
  {
    Section top(root, "");
    top.get("seed", cfg.seed);
    top.check_unknown();
  }
  {
    const json j = section_of(root, "network");
    Section s(j, "network.");
    s.get("in_channels_a", cfg.network.in_channels_a);
    s.get("in_channels_b", cfg.network.in_channels_b);
    s.get("pathway_kernels", cfg.network.pathway_kernels);
    s.get("head_kernels", cfg.network.head_kernels);
    s.get("dropout_rate", cfg.network.dropout_rate);
    s.get("dilation_schedule", cfg.network.dilation_schedule);
    s.get("block_sizes", cfg.network.block_sizes);
    s.check_unknown();
    cfg.network.validate();
  }
  {
    const json j = section_of(root, "training");
    Section s(j, "training.");
    s.get("learning_rate", cfg.training.learning_rate);
    s.get("batch_size", cfg.training.batch_size);
    s.get("iterations", cfg.training.iterations);
    s.get("background_weight", cfg.training.background_weight);
    s.get("lesion_weight", cfg.training.lesion_weight);
    s.get("augment_range_deg", cfg.training.augment_range_deg);
    s.check_unknown();
    cfg.training.seed = cfg.seed;
    cfg.training.validate();
  }
  {
    const json j = section_of(root, "adaptation");
    Section s(j, "adaptation.");
    if (j.contains("n_slices")) {
      const auto& v = j.at("n_slices");
      if (v.is_string() && v.get<std::string>() == "all") {
        cfg.adaptation.n_slices.reset();
      } else if (v.is_number_integer() && v.get<int>() >= 1) {
        cfg.adaptation.n_slices = v.get<int>();
      } else {
        throw ConfigError("config: 'adaptation.n_slices' must be a positive integer or \"all\"");
      }
      s.mark_used("n_slices");
    }
    std::string pool;
    s.get("pool", pool);
    if (!pool.empty()) cfg.adaptation.pool = slice_pool_from_string(pool);
    std::string weighting;
    s.get("weighting", weighting);
    if (!weighting.empty()) cfg.adaptation.weighting = weighting_from_string(weighting);
    s.get("finetune_iterations", cfg.adaptation.finetune_iterations);
    s.check_unknown();
    if (cfg.adaptation.finetune_iterations < 0)
      throw ConfigError("config: 'adaptation.finetune_iterations' must be >= 0");
  }
  {
    const json j = section_of(root, "postprocess");
    Section s(j, "postprocess.");
    std::string task;
    s.get("task", task);
    if (!task.empty()) cfg.postprocess.task = task_from_string(task);
    s.check_unknown();
  }
  {
    const json j = section_of(root, "uncertainty");
    Section s(j, "uncertainty.");
    s.get("n_repeats", cfg.uncertainty.n_repeats);
    s.check_unknown();
    if (cfg.uncertainty.n_repeats < 2) throw ConfigError("config: 'uncertainty.n_repeats' must be >= 2");
  }
  {
    const json j = section_of(root, "predict");
    Section s(j, "predict.");
    s.get("tile_px", cfg.predict.tile_px);
    s.check_unknown();
  }
  {
    const json j = section_of(root, "paths");
    Section s(j, "paths.");
    s.get_path("data_manifest", cfg.paths.data_manifest);
    s.get_path("checkpoint_dir", cfg.paths.checkpoint_dir);
    s.get_path("output_dir", cfg.paths.output_dir);
    s.check_unknown();
  }
  {
    const json j = section_of(root, "phantom");
    Section s(j, "phantom.");
    s.get_fixed("shape", cfg.phantom.shape);
    s.get_fixed("spacing", cfg.phantom.spacing);
    s.get_fixed("organ_semiaxes", cfg.phantom.organ_semiaxes);
    s.get("lesions_min", cfg.phantom.lesions_min);
    s.get("lesions_max", cfg.phantom.lesions_max);
    s.get("lesion_radius_min_mm", cfg.phantom.lesion_radius_min_mm);
    s.get("lesion_radius_max_mm", cfg.phantom.lesion_radius_max_mm);
    s.get("base_intensity_min", cfg.phantom.base_intensity_min);
    s.get("base_intensity_max", cfg.phantom.base_intensity_max);
    s.get("texture_smoothness_min", cfg.phantom.texture_smoothness_min);
    s.get("texture_smoothness_max", cfg.phantom.texture_smoothness_max);
    s.get("texture_amplitude_min", cfg.phantom.texture_amplitude_min);
    s.get("texture_amplitude_max", cfg.phantom.texture_amplitude_max);
    s.get("contrast_a_min", cfg.phantom.contrast_a_min);
    s.get("contrast_a_max", cfg.phantom.contrast_a_max);
    s.get("contrast_b_min", cfg.phantom.contrast_b_min);
    s.get("contrast_b_max", cfg.phantom.contrast_b_max);
    s.get("followup_scale_min", cfg.phantom.followup_scale_min);
    s.get("followup_scale_max", cfg.phantom.followup_scale_max);
    s.get("p_new_lesion", cfg.phantom.p_new_lesion);
    s.get("p_disappear", cfg.phantom.p_disappear);
    s.get("max_shift_vox", cfg.phantom.max_shift_vox);
    s.get("noise_sd", cfg.phantom.noise_sd);
    s.get("shift_contrast_scale", cfg.phantom.shift_contrast_scale);
    s.get("shift_texture_amplitude", cfg.phantom.shift_texture_amplitude);
    s.get("shift_base_intensity", cfg.phantom.shift_base_intensity);
    s.get("n_train", cfg.phantom_train);
    s.get("n_test", cfg.phantom_test);
    s.check_unknown();
    cfg.phantom.seed = cfg.seed;
    cfg.phantom.validate();
    if (cfg.phantom_train < 1 || cfg.phantom_test < 1)
      throw ConfigError("config: 'phantom.n_train' and 'phantom.n_test' must be >= 1");
  }
  {
    const json j = section_of(root, "reproduce");
    Section s(j, "reproduce.");
    s.get("iterations_sweep", cfg.reproduce.iterations_sweep);
    s.check_unknown();
    for (int it : cfg.reproduce.iterations_sweep)
      if (it < 0) throw ConfigError("config: 'reproduce.iterations_sweep' entries must be >= 0");
  }
  return cfg;
}

}  // namespace followup
