/* Copyright (c) 2026 The mitodet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include "mitodet/config.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace mitodet {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += v[i];
    } else if constexpr (std::is_floating_point_v<T>) {
      out += fmt(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const std::string v = trim(value);
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("invalid value '" + value + "' for " + key);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean '" + value + "' for " + key);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  for (const auto& item : split_list(value)) out.push_back(parse_number<T>(key, item));
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field number(T RunConfig::*member) {
  return {[member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          },
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_number<T>(k, v);
          }};
}

Field flag(bool RunConfig::*member) {
  return {[member](const RunConfig& c) { return fmt(c.*member); },
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_bool(k, v);
          }};
}

// Wraps a nested member accessed through `get_ref`.
template <typename T, typename Ref>
Field nested(Ref ref) {
  return {[ref](const RunConfig& c) {
            const T& v = ref(const_cast<RunConfig&>(c));
            if constexpr (std::is_same_v<T, bool>) {
              return fmt(v);
            } else if constexpr (std::is_floating_point_v<T>) {
              return fmt(v);
            } else {
              return std::to_string(v);
            }
          },
          [ref](RunConfig& c, const std::string& k, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>) {
              ref(c) = parse_bool(k, v);
            } else {
              ref(c) = parse_number<T>(k, v);
            }
          }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["data.manifest"] = {
        [](const RunConfig& c) { return c.manifest.string(); },
        [](RunConfig& c, const std::string&, const std::string& v) { c.manifest = trim(v); }};
    t["data.classes"] = {
        [](const RunConfig& c) { return join(c.classes); },
        [](RunConfig& c, const std::string&, const std::string& v) { c.classes = split_list(v); }};
    t["data.held_out"] = {
        [](const RunConfig& c) { return c.held_out; },
        [](RunConfig& c, const std::string&, const std::string& v) { c.held_out = trim(v); }};
    t["data.patch_size"] = number(&RunConfig::patch_size);
    t["data.patches_per_case"] = number(&RunConfig::patches_per_case);
    t["data.sampling"] = {
        [](const RunConfig& c) { return to_string(c.sampling); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            c.sampling = parse_sampling_strategy(trim(v));
          } catch (const std::invalid_argument& e) {
            throw ConfigError(k + ": " + e.what());
          }
        }};
    t["data.val_fraction"] = number(&RunConfig::val_fraction);

    t["augment.brightness"] = nested<double>([](RunConfig& c) -> double& { return c.augment.brightness; });
    t["augment.contrast"] = nested<double>([](RunConfig& c) -> double& { return c.augment.contrast; });
    t["augment.saturation"] = nested<double>([](RunConfig& c) -> double& { return c.augment.saturation; });
    t["augment.hue"] = nested<double>([](RunConfig& c) -> double& { return c.augment.hue; });
    t["augment.crop_size"] = nested<int>([](RunConfig& c) -> int& { return c.augment.crop_size; });
    t["augment.flip_h_prob"] = nested<double>([](RunConfig& c) -> double& { return c.augment.flip_h_prob; });
    t["augment.flip_v_prob"] = nested<double>([](RunConfig& c) -> double& { return c.augment.flip_v_prob; });
    t["augment.enabled"] = nested<bool>([](RunConfig& c) -> bool& { return c.augment.enabled; });

    t["loss.alpha"] = number(&RunConfig::alpha);
    t["loss.gamma"] = number(&RunConfig::gamma);
    t["loss.w_det"] = nested<double>([](RunConfig& c) -> double& { return c.weights.detection; });
    t["loss.w_tumor"] = nested<double>([](RunConfig& c) -> double& { return c.weights.tumor; });
    t["loss.w_fg"] = nested<double>([](RunConfig& c) -> double& { return c.weights.foreground; });

    t["model.backbone"] = {
        [](const RunConfig& c) { return to_string(c.backbone.variant); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            c.backbone.variant = parse_backbone_variant(trim(v));
          } catch (const std::invalid_argument& e) {
            throw ConfigError(k + ": " + e.what());
          }
        }};
    t["model.channels"] = nested<int>([](RunConfig& c) -> int& { return c.backbone.channels; });
    t["model.pretrained"] = nested<bool>([](RunConfig& c) -> bool& { return c.backbone.pretrained; });
    t["model.pyramid_strides"] = {
        [](const RunConfig& c) { return join(c.backbone.pyramid_strides); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.backbone.pyramid_strides = parse_list<int>(k, v);
        }};
    t["model.aux_hidden"] = number(&RunConfig::aux_hidden);
    t["model.head_convs"] = number(&RunConfig::head_convs);

    t["anchors.base_sizes"] = {
        [](const RunConfig& c) { return join(c.anchor_base_sizes); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.anchor_base_sizes = parse_list<double>(k, v);
        }};
    t["anchors.scales"] = {
        [](const RunConfig& c) { return join(c.anchor_scales); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.anchor_scales = parse_list<double>(k, v);
        }};
    t["anchors.aspect_ratios"] = {
        [](const RunConfig& c) { return join(c.anchor_ratios); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.anchor_ratios = parse_list<double>(k, v);
        }};

    t["match.pos_iou"] = number(&RunConfig::pos_iou);
    t["match.neg_iou"] = number(&RunConfig::neg_iou);

    t["heads.foreground"] = flag(&RunConfig::foreground_head);
    t["heads.tumor"] = flag(&RunConfig::tumor_head);

    t["train.optimizer"] = {
        [](const RunConfig& c) { return c.optimizer; },
        [](RunConfig& c, const std::string&, const std::string& v) { c.optimizer = trim(v); }};
    t["train.learning_rate"] = number(&RunConfig::learning_rate);
    t["train.batch_size"] = number(&RunConfig::batch_size);
    t["train.epochs"] = number(&RunConfig::epochs);
    t["train.seed"] = number(&RunConfig::seed);

    t["eval.score_threshold"] = nested<double>([](RunConfig& c) -> double& { return c.predict.score_threshold; });
    t["eval.nms_threshold"] = nested<double>([](RunConfig& c) -> double& { return c.predict.nms_threshold; });
    t["eval.max_detections"] = nested<int>([](RunConfig& c) -> int& { return c.predict.max_detections; });
    t["eval.pre_nms_top_k"] = nested<int>([](RunConfig& c) -> int& { return c.predict.pre_nms_top_k; });
    t["eval.iou_threshold"] = nested<double>([](RunConfig& c) -> double& { return c.match.iou_threshold; });
    t["eval.match"] = {
        [](const RunConfig& c) { return to_string(c.match.mode); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            c.match.mode = parse_match_mode(trim(v));
          } catch (const std::invalid_argument& e) {
            throw ConfigError(k + ": " + e.what());
          }
        }};
    t["eval.center_distance"] = nested<double>([](RunConfig& c) -> double& { return c.match.center_distance; });
    t["eval.plots"] = flag(&RunConfig::plots);

    t["ablation.seeds"] = {
        [](const RunConfig& c) { return join(c.ablation_seeds); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.ablation_seeds = parse_list<std::uint64_t>(k, v);
        }};

    t["synth.cases"] = number(&RunConfig::synth_cases);
    t["synth.image_size"] = number(&RunConfig::synth_image_size);
    t["synth.seed"] = number(&RunConfig::synth_seed);

    t["output.dir"] = {
        [](const RunConfig& c) { return c.output_dir.string(); },
        [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = trim(v); }};
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (classes.empty()) fail("data.classes must not be empty");
  if (std::find(classes.begin(), classes.end(), held_out) == classes.end()) {
    fail("data.held_out '" + held_out + "' is not in data.classes");
  }
  if (patch_size <= 0) fail("data.patch_size must be > 0");
  if (patches_per_case < 1) fail("data.patches_per_case must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    fail("data.val_fraction must lie in [0, 1)");
  }
  if (augment.crop_size > patch_size) {
    fail("augment.crop_size must not exceed data.patch_size");
  }
  if (optimizer != "adam") fail("train.optimizer must be 'adam'");
  if (!(learning_rate > 0.0)) fail("train.learning_rate must be > 0");
  if (batch_size < 1) fail("train.batch_size must be >= 1");
  if (epochs < 0) fail("train.epochs must be >= 0");
  if (backbone.pretrained) fail("model.pretrained: no pretrained weights are available");
  if (!(neg_iou <= pos_iou) || pos_iou <= 0.0 || pos_iou > 1.0 || neg_iou < 0.0) {
    fail("match thresholds must satisfy 0 <= neg_iou <= pos_iou <= 1");
  }
  if (anchor_base_sizes.size() != backbone.pyramid_strides.size()) {
    fail("anchors.base_sizes needs one entry per pyramid stride");
  }
  if (ablation_seeds.empty()) fail("ablation.seeds must not be empty");
  if (synth_cases < 1) fail("synth.cases must be >= 1");
  if (match.iou_threshold < 0.0 || match.iou_threshold > 1.0) {
    fail("eval.iou_threshold must lie in [0, 1]");
  }
  try {
    augment.validate();
    loss_config(*this).validate();
    model_config(*this).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

AnchorConfig anchor_config(const RunConfig& config) {
  AnchorConfig out;
  const auto& strides = config.backbone.pyramid_strides;
  for (std::size_t i = 0; i < strides.size() && i < config.anchor_base_sizes.size(); ++i) {
    out.levels.push_back({strides[i], config.anchor_base_sizes[i],
                          config.anchor_scales, config.anchor_ratios});
  }
  return out;
}

ModelConfig model_config(const RunConfig& config) {
  ModelConfig m;
  m.backbone = config.backbone;
  m.anchors = anchor_config(config);
  m.num_tumor_classes = static_cast<int>(config.classes.size());
  m.aux_hidden = config.aux_hidden;
  m.head_convs = config.head_convs;
  m.aux_heads = config.tumor_head || config.foreground_head;
  return m;
}

LossConfig loss_config(const RunConfig& config) {
  LossConfig l;
  l.alpha = config.alpha;
  l.gamma = config.gamma;
  l.num_tumor_classes = static_cast<int>(config.classes.size());
  l.weights = config.weights;
  if (!config.tumor_head) l.weights.tumor = 0.0;
  if (!config.foreground_head) l.weights.foreground = 0.0;
  return l;
}

std::map<std::string, std::string> to_key_values(const RunConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& [key, field] : fields()) out[key] = field.get(config);
  return out;
}

void set_config_value(RunConfig& config, const std::string& key,
                      const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(config, key, value);
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set_config_value(config, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return config;
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& [key, value] : to_key_values(config)) {
    out += key + " = " + value + "\n";
  }
  return out;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << serialize_config(config);
}

std::vector<std::string> diff_configs(
    const std::map<std::string, std::string>& a,
    const std::map<std::string, std::string>& b,
    const std::vector<std::string>& key_prefixes) {
  auto selected = [&](const std::string& key) {
    if (key_prefixes.empty()) return true;
    return std::any_of(key_prefixes.begin(), key_prefixes.end(),
                       [&](const std::string& p) { return key.rfind(p, 0) == 0; });
  };
  std::map<std::string, std::pair<std::string, std::string>> merged;
  for (const auto& [k, v] : a) merged[k].first = v;
  for (const auto& [k, v] : b) merged[k].second = v;
  std::vector<std::string> out;
  for (const auto& [k, v] : merged) {
    if (selected(k) && v.first != v.second) {
      out.push_back(k + ": " + v.first + " != " + v.second);
    }
  }
  return out;
}

}  // namespace mitodet
