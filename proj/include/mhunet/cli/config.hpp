#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mhunet/errors.hpp"

namespace mhunet::cli {

struct KeySpec {
  const char* section;
  const char* key;
  const char* default_value;
  const char* help;
};

/// Every accepted key with its default. Keys are addressed as "section.key".
inline const std::vector<KeySpec>& key_schema() {
  static const std::vector<KeySpec> schema = {
      {"run", "seed", "0", "seed for every random draw"},
      {"run", "out", "mhunet_out", "output directory"},
      {"run", "deterministic", "false", "omit timestamps from log lines"},

      {"data", "input", "", "preprocess: directory of patient subdirectories holding NIfTI volumes"},
      {"data", "dataset", "", "train/eval: preprocessed dataset directory (contains manifest.tsv)"},
      {"data", "image_name", "img.nii", "image volume file name inside each patient directory"},
      {"data", "mask_name", "gt.nii", "label volume file name (optional per patient)"},
      {"data", "extent", "256", "slice extent after resizing; also the model input extent"},
      {"data", "axis", "axial", "slicing axis: axial, coronal, sagittal"},
      {"data", "sharpen_amount", "0.5", "unsharp-mask strength"},
      {"data", "sharpen_radius", "1", "box-blur radius of the unsharp mask"},

      {"model", "preset", "base", "base or lighter; the keys below override it when non-empty"},
      {"model", "patch_size", "", "patch edge length"},
      {"model", "embed_dim", "", "stage-0 channel count C"},
      {"model", "depths", "", "comma-separated VSS blocks per stage"},
      {"model", "state_dim", "", "SSM state size n"},
      {"model", "num_classes", "", "output classes"},
      {"model", "dropout", "", "dropout rate of the upsampling blocks"},
      {"model", "activation", "", "silu or softmax"},
      {"model", "rule", "", "discretization: bilinear or zoh"},
      {"model", "expand", "", "VSS inner width multiplier"},

      {"train", "epochs", "10", "passes over the training split"},
      {"train", "batch_size", "4", "samples per optimizer step"},
      {"train", "optimizer", "sgd", "sgd or adam"},
      {"train", "lr", "0.01", "learning rate"},
      {"train", "beta1", "0.9", "Adam first-moment decay"},
      {"train", "beta2", "0.999", "Adam second-moment decay"},
      {"train", "dice_weight", "0.5", "weight of the soft Dice term"},
      {"train", "ce_weight", "0.5", "weight of the cross-entropy term"},
      {"train", "checkpoint", "model.ckpt", "checkpoint file name inside run.out"},
      {"train", "log", "train_log.tsv", "per-step loss log file name inside run.out"},

      {"eval", "checkpoint", "", "checkpoint to evaluate"},
      {"eval", "split", "test", "train, val or test"},
      {"eval", "reference", "model", "model, or ground_truth to score the labels against themselves"},
      {"eval", "spacing", "pixel", "hd95 unit: pixel or mm"},
      {"eval", "report", "metrics.json", "report file name inside run.out"},

      {"predict", "checkpoint", "", "checkpoint to run"},
      {"predict", "input", "", "a preprocessed slice (.bin) or a NIfTI volume (.nii)"},
      {"predict", "slice", "0", "slice index when the input is a volume"},
      {"predict", "output", "prediction.png", "mask file name inside run.out"},

      {"bench", "lengths", "256,1024,4096", "sequence lengths"},
      {"bench", "states", "4,16", "state sizes"},
      {"bench", "delta", "0.01", "discretization step"},
      {"bench", "repeats", "3", "timing repetitions (the minimum is reported)"},

      {"synth", "patients", "10", "number of synthetic patients"},
      {"synth", "slices", "4", "slices per patient"},
      {"synth", "extent", "64", "slice extent"},
      {"synth", "max_lesions", "3", "lesions per slice drawn from [1, max_lesions]"},
      {"synth", "noise", "0.08", "Gaussian noise standard deviation"},
  };
  return schema;
}

/// Resolved configuration: schema defaults, then the config file, then overrides.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : key_schema()) values_[qualified(k.section, k.key)] = k.default_value;
  }

  /// Sets "section.key"; unknown keys are a ConfigError.
  void set(const std::string& name, const std::string& value) {
    auto it = values_.find(name);
    if (it == values_.end()) throw ConfigError("unknown config key '" + name + "'");
    it->second = value;
  }

  /// Applies "section.key=value".
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  /// INI text: [section] headers, key = value lines, ';' or '#' comments.
  void merge_ini(const std::string& text, const std::string& origin = "config") {
    std::istringstream filtered(strip_hash_comments(text));
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(filtered, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(origin + ": line " + std::to_string(e.line()) + ": " + e.message());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty())
        throw ConfigError(origin + ": key '" + section + "' outside any [section]");
      for (const auto& [key, leaf] : body) set(section + "." + key, leaf.data());
    }
  }

  const std::string& str(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ConfigError("unknown config key '" + name + "'");
    return it->second;
  }

  std::string required(const std::string& name) const {
    const auto& v = str(name);
    if (v.empty()) throw ConfigError("config key '" + name + "' is required");
    return v;
  }

  std::uint64_t u64(const std::string& name) const { return parse_number<std::uint64_t>(name, str(name)); }
  std::size_t size(const std::string& name) const { return parse_number<std::size_t>(name, str(name)); }

  double real(const std::string& name) const {
    const auto& v = str(name);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument("trailing");
      return d;
    } catch (const std::logic_error&) {
      throw ConfigError("config key '" + name + "': '" + v + "' is not a finite number");
    }
  }

  bool flag(const std::string& name) const {
    const auto& v = str(name);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + name + "': '" + v + "' is not a boolean");
  }

  std::vector<std::size_t> size_list(const std::string& name) const {
    std::vector<std::size_t> out;
    std::stringstream ss(str(name));
    for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_number<std::size_t>(name, trim(item)));
    if (out.empty()) throw ConfigError("config key '" + name + "' must list at least one value");
    return out;
  }

  /// "section.key=value" lines in schema order.
  std::vector<std::string> resolved_lines() const {
    std::vector<std::string> out;
    for (const auto& k : key_schema()) {
      const auto name = qualified(k.section, k.key);
      out.push_back(name + "=" + values_.at(name));
    }
    return out;
  }

 private:
  static std::string qualified(const char* s, const char* k) { return std::string(s) + "." + k; }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
  }

  // read_ini only understands ';' comments; treat leading '#' the same way.
  static std::string strip_hash_comments(const std::string& text) {
    std::istringstream in(text);
    std::string out, line;
    while (std::getline(in, line)) {
      const auto t = trim(line);
      out += (t.empty() || t[0] == '#') ? std::string() : line;
      out += '\n';
    }
    return out;
  }

  template <class T>
  static T parse_number(const std::string& name, const std::string& v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
      throw ConfigError("config key '" + name + "': '" + v + "' is not a non-negative integer");
    return out;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace mhunet::cli
