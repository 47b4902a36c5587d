#include "cgt/config.hpp"

#include "cgt/io.hpp"

#include <cctype>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>

namespace cgt {

namespace {

int to_int(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const unsigned long long out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected an unsigned integer, got '" + v + "'");
  }
}

double to_dbl(const std::string& v, const std::string& key) {
  return parse_double_strict(v, "config key " + key);
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(item, key));
  if (out.empty()) throw ConfigError("config key " + key + ": expected a comma-separated list");
  return out;
}

std::string render_int_list(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

struct KeyEntry {
  std::string key;
  std::function<void(PipelineConfig&, const std::string&)> apply;
  std::function<std::string(const PipelineConfig&)> render;
};

const std::vector<KeyEntry>& registry() {
  static const std::vector<KeyEntry> entries = [] {
    std::vector<KeyEntry> r;
    auto add = [&r](const std::string& key, std::function<void(PipelineConfig&, const std::string&)> apply,
                    std::function<std::string(const PipelineConfig&)> render) {
      r.push_back({key, std::move(apply), std::move(render)});
    };

    add("data.series", [](PipelineConfig& c, const std::string& v) { c.data.series = v; },
        [](const PipelineConfig& c) { return c.data.series; });
    add("data.has_header",
        [](PipelineConfig& c, const std::string& v) { c.data.has_header = to_bool(v, "data.has_header"); },
        [](const PipelineConfig& c) { return c.data.has_header ? "true" : "false"; });
    add("data.labels", [](PipelineConfig& c, const std::string& v) { c.data.labels = v; },
        [](const PipelineConfig& c) { return c.data.labels; });
    add("data.causes", [](PipelineConfig& c, const std::string& v) { c.data.causes = v; },
        [](const PipelineConfig& c) { return c.data.causes; });
    add("data.train_length",
        [](PipelineConfig& c, const std::string& v) { c.data.train_length = to_int(v, "data.train_length"); },
        [](const PipelineConfig& c) { return std::to_string(c.data.train_length); });
    add("data.val_length",
        [](PipelineConfig& c, const std::string& v) { c.data.val_length = to_int(v, "data.val_length"); },
        [](const PipelineConfig& c) { return std::to_string(c.data.val_length); });

    add("graph.alpha_level",
        [](PipelineConfig& c, const std::string& v) { c.graph.alpha_level = to_dbl(v, "graph.alpha_level"); },
        [](const PipelineConfig& c) { return format_double(c.graph.alpha_level); });
    add("graph.max_cond",
        [](PipelineConfig& c, const std::string& v) { c.graph.max_cond = to_int(v, "graph.max_cond"); },
        [](const PipelineConfig& c) { return std::to_string(c.graph.max_cond); });
    add("graph.file", [](PipelineConfig& c, const std::string& v) { c.graph.file = v; },
        [](const PipelineConfig& c) { return c.graph.file; });

    add("model.window",
        [](PipelineConfig& c, const std::string& v) { c.model.window = to_int(v, "model.window"); },
        [](const PipelineConfig& c) { return std::to_string(c.model.window); });
    add("model.tau_max",
        [](PipelineConfig& c, const std::string& v) { c.model.tau_max = to_int(v, "model.tau_max"); },
        [](const PipelineConfig& c) { return std::to_string(c.model.tau_max); });
    add("model.d_model",
        [](PipelineConfig& c, const std::string& v) { c.model.d_model = to_int(v, "model.d_model"); },
        [](const PipelineConfig& c) { return std::to_string(c.model.d_model); });
    add("model.n_heads",
        [](PipelineConfig& c, const std::string& v) { c.model.n_heads = to_int(v, "model.n_heads"); },
        [](const PipelineConfig& c) { return std::to_string(c.model.n_heads); });
    add("model.n_layers",
        [](PipelineConfig& c, const std::string& v) { c.model.n_layers = to_int(v, "model.n_layers"); },
        [](const PipelineConfig& c) { return std::to_string(c.model.n_layers); });
    add("model.d_ff", [](PipelineConfig& c, const std::string& v) { c.model.d_ff = to_int(v, "model.d_ff"); },
        [](const PipelineConfig& c) { return std::to_string(c.model.d_ff); });
    add("model.d_z", [](PipelineConfig& c, const std::string& v) { c.model.d_z = to_int(v, "model.d_z"); },
        [](const PipelineConfig& c) { return std::to_string(c.model.d_z); });
    add("model.mc_samples",
        [](PipelineConfig& c, const std::string& v) { c.model.mc_samples = to_int(v, "model.mc_samples"); },
        [](const PipelineConfig& c) { return std::to_string(c.model.mc_samples); });
    add("model.logvar_lo",
        [](PipelineConfig& c, const std::string& v) { c.model.logvar_lo = to_dbl(v, "model.logvar_lo"); },
        [](const PipelineConfig& c) { return format_double(c.model.logvar_lo); });
    add("model.logvar_hi",
        [](PipelineConfig& c, const std::string& v) { c.model.logvar_hi = to_dbl(v, "model.logvar_hi"); },
        [](const PipelineConfig& c) { return format_double(c.model.logvar_hi); });
    add("model.sinusoidal_position",
        [](PipelineConfig& c, const std::string& v) {
          c.model.sinusoidal_position = to_bool(v, "model.sinusoidal_position");
        },
        [](const PipelineConfig& c) { return c.model.sinusoidal_position ? "true" : "false"; });

    add("train.epochs",
        [](PipelineConfig& c, const std::string& v) { c.train.epochs = to_int(v, "train.epochs"); },
        [](const PipelineConfig& c) { return std::to_string(c.train.epochs); });
    add("train.warmup_epochs",
        [](PipelineConfig& c, const std::string& v) { c.train.warmup_epochs = to_int(v, "train.warmup_epochs"); },
        [](const PipelineConfig& c) { return std::to_string(c.train.warmup_epochs); });
    add("train.gamma",
        [](PipelineConfig& c, const std::string& v) { c.train.gamma = to_dbl(v, "train.gamma"); },
        [](const PipelineConfig& c) { return format_double(c.train.gamma); });
    add("train.beta", [](PipelineConfig& c, const std::string& v) { c.train.beta = to_dbl(v, "train.beta"); },
        [](const PipelineConfig& c) { return format_double(c.train.beta); });
    add("train.lambda_res",
        [](PipelineConfig& c, const std::string& v) { c.train.lambda_res = to_dbl(v, "train.lambda_res"); },
        [](const PipelineConfig& c) { return format_double(c.train.lambda_res); });
    add("train.lambda_prior",
        [](PipelineConfig& c, const std::string& v) { c.train.lambda_prior = to_dbl(v, "train.lambda_prior"); },
        [](const PipelineConfig& c) { return format_double(c.train.lambda_prior); });
    add("train.lambda_other",
        [](PipelineConfig& c, const std::string& v) { c.train.lambda_other = to_dbl(v, "train.lambda_other"); },
        [](const PipelineConfig& c) { return format_double(c.train.lambda_other); });
    add("train.lambda_push",
        [](PipelineConfig& c, const std::string& v) { c.train.lambda_push = to_dbl(v, "train.lambda_push"); },
        [](const PipelineConfig& c) { return format_double(c.train.lambda_push); });
    add("train.lambda_margin",
        [](PipelineConfig& c, const std::string& v) { c.train.lambda_margin = to_dbl(v, "train.lambda_margin"); },
        [](const PipelineConfig& c) { return format_double(c.train.lambda_margin); });
    add("train.margin",
        [](PipelineConfig& c, const std::string& v) { c.train.margin = to_dbl(v, "train.margin"); },
        [](const PipelineConfig& c) { return format_double(c.train.margin); });
    add("train.lambda_group",
        [](PipelineConfig& c, const std::string& v) { c.train.lambda_group = to_dbl(v, "train.lambda_group"); },
        [](const PipelineConfig& c) { return format_double(c.train.lambda_group); });
    add("train.parent_bce_weight",
        [](PipelineConfig& c, const std::string& v) {
          c.train.parent_bce_weight = to_dbl(v, "train.parent_bce_weight");
        },
        [](const PipelineConfig& c) { return format_double(c.train.parent_bce_weight); });
    add("train.learning_rate",
        [](PipelineConfig& c, const std::string& v) { c.train.learning_rate = to_dbl(v, "train.learning_rate"); },
        [](const PipelineConfig& c) { return format_double(c.train.learning_rate); });
    add("train.clip_norm",
        [](PipelineConfig& c, const std::string& v) { c.train.clip_norm = to_dbl(v, "train.clip_norm"); },
        [](const PipelineConfig& c) { return format_double(c.train.clip_norm); });
    add("train.batch_size",
        [](PipelineConfig& c, const std::string& v) { c.train.batch_size = to_int(v, "train.batch_size"); },
        [](const PipelineConfig& c) { return std::to_string(c.train.batch_size); });

    add("score.rule",
        [](PipelineConfig& c, const std::string& v) {
          try {
            c.score.rule = parse_aggregate_rule(v);
          } catch (const Error& e) {
            throw ConfigError("config key score.rule: " + std::string(e.what()));
          }
        },
        [](const PipelineConfig& c) { return aggregate_rule_name(c.score.rule); });
    add("score.topk",
        [](PipelineConfig& c, const std::string& v) { c.score.topk = to_int(v, "score.topk"); },
        [](const PipelineConfig& c) { return std::to_string(c.score.topk); });

    add("safety.tau_rel",
        [](PipelineConfig& c, const std::string& v) { c.safety.tau_rel = to_dbl(v, "safety.tau_rel"); },
        [](const PipelineConfig& c) { return format_double(c.safety.tau_rel); });
    add("safety.tau_alpha",
        [](PipelineConfig& c, const std::string& v) { c.safety.tau_alpha = to_dbl(v, "safety.tau_alpha"); },
        [](const PipelineConfig& c) { return format_double(c.safety.tau_alpha); });
    add("safety.epsilon",
        [](PipelineConfig& c, const std::string& v) { c.safety.epsilon = to_dbl(v, "safety.epsilon"); },
        [](const PipelineConfig& c) { return format_double(c.safety.epsilon); });
    add("safety.hard_mode",
        [](PipelineConfig& c, const std::string& v) { c.safety.hard_mode = to_bool(v, "safety.hard_mode"); },
        [](const PipelineConfig& c) { return c.safety.hard_mode ? "true" : "false"; });

    add("spot.q", [](PipelineConfig& c, const std::string& v) { c.spot.q = to_dbl(v, "spot.q"); },
        [](const PipelineConfig& c) { return format_double(c.spot.q); });
    add("spot.level",
        [](PipelineConfig& c, const std::string& v) { c.spot.level = to_dbl(v, "spot.level"); },
        [](const PipelineConfig& c) { return format_double(c.spot.level); });
    add("spot.lambda_thr",
        [](PipelineConfig& c, const std::string& v) { c.spot.lambda_thr = to_dbl(v, "spot.lambda_thr"); },
        [](const PipelineConfig& c) { return format_double(c.spot.lambda_thr); });
    add("spot.burn_frac",
        [](PipelineConfig& c, const std::string& v) { c.spot.burn_frac = to_dbl(v, "spot.burn_frac"); },
        [](const PipelineConfig& c) { return format_double(c.spot.burn_frac); });
    add("spot.burn_min",
        [](PipelineConfig& c, const std::string& v) { c.spot.burn_min = to_int(v, "spot.burn_min"); },
        [](const PipelineConfig& c) { return std::to_string(c.spot.burn_min); });

    add("attribution.method",
        [](PipelineConfig& c, const std::string& v) { c.attribution.method = parse_attribution_select(v); },
        [](const PipelineConfig& c) { return attribution_select_name(c.attribution.method); });
    add("attribution.gate_threshold",
        [](PipelineConfig& c, const std::string& v) {
          c.attribution.gate_threshold = to_dbl(v, "attribution.gate_threshold");
        },
        [](const PipelineConfig& c) { return format_double(c.attribution.gate_threshold); });
    add("attribution.percentages",
        [](PipelineConfig& c, const std::string& v) {
          c.attribution.percentages = to_int_list(v, "attribution.percentages");
        },
        [](const PipelineConfig& c) { return render_int_list(c.attribution.percentages); });

    add("run.workdir", [](PipelineConfig& c, const std::string& v) { c.run.workdir = v; },
        [](const PipelineConfig& c) { return c.run.workdir; });
    add("run.workers",
        [](PipelineConfig& c, const std::string& v) { c.run.workers = to_int(v, "run.workers"); },
        [](const PipelineConfig& c) { return std::to_string(c.run.workers); });
    add("run.seed", [](PipelineConfig& c, const std::string& v) { c.run.seed = to_u64(v, "run.seed"); },
        [](const PipelineConfig& c) { return std::to_string(c.run.seed); });

    add("synth.seed",
        [](PipelineConfig& c, const std::string& v) { c.synth.seed = to_u64(v, "synth.seed"); },
        [](const PipelineConfig& c) { return std::to_string(c.synth.seed); });
    return r;
  }();
  return entries;
}

const KeyEntry* find_entry(const std::string& key) {
  for (const KeyEntry& e : registry()) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

std::string env_name(const std::string& key) {
  std::string name = "CGT_";
  for (char ch : key) {
    if (ch == '.') {
      name += '_';
    } else {
      name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    }
  }
  return name;
}

}  // namespace

AttributionSelect parse_attribution_select(const std::string& name) {
  if (name == "zscore") return AttributionSelect::ZScore;
  if (name == "clamp") return AttributionSelect::Clamp;
  if (name == "both") return AttributionSelect::Both;
  throw ConfigError("attribution.method must be zscore, clamp, or both; got '" + name + "'");
}

std::string attribution_select_name(AttributionSelect sel) {
  switch (sel) {
    case AttributionSelect::ZScore: return "zscore";
    case AttributionSelect::Clamp: return "clamp";
    case AttributionSelect::Both: return "both";
  }
  throw ConfigError("unknown attribution method");
}

void PipelineConfig::finalize() {
  // Shared fields live in one section each; mirror them into the sub-configs
  // that consume them so every module sees a consistent view.
  train.seed = run.seed;
  safety.seed = run.seed;
  safety.mc_samples = model.mc_samples;
  safety.batch_size = train.batch_size;
  safety.rule = score.rule;
  safety.topk = score.topk;

  if (data.train_length < 1) throw ConfigError("data.train_length must be >= 1");
  if (data.val_length < 1) throw ConfigError("data.val_length must be >= 1");
  if (!(graph.alpha_level > 0.0 && graph.alpha_level < 1.0))
    throw ConfigError("graph.alpha_level must lie in (0, 1)");
  if (graph.max_cond < 0) throw ConfigError("graph.max_cond must be >= 0");
  if (score.topk < 1) throw ConfigError("score.topk must be >= 1");
  if (!(attribution.gate_threshold >= 0.0 && attribution.gate_threshold <= 1.0))
    throw ConfigError("attribution.gate_threshold must lie in [0, 1]");
  for (int p : attribution.percentages) {
    if (p < 1) throw ConfigError("attribution.percentages entries must be >= 1");
  }
  if (run.workdir.empty()) throw ConfigError("run.workdir must not be empty");
  if (run.workers < 1) throw ConfigError("run.workers must be >= 1");

  train.validate();
  safety.validate();
  spot.validate();
  // model.validate() runs once dims is known, at the stage that loads data.
}

std::string PipelineConfig::series_path() const {
  return data.series.empty() ? run.workdir + "/series.csv" : data.series;
}

std::string PipelineConfig::labels_path() const {
  return data.labels.empty() ? run.workdir + "/labels.csv" : data.labels;
}

std::string PipelineConfig::causes_path() const {
  return data.causes.empty() ? run.workdir + "/causes.csv" : data.causes;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const KeyEntry& e : registry()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

void apply_config_kv(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  const KeyEntry* entry = find_entry(key);
  if (entry == nullptr) throw ConfigError("unknown config key: " + key);
  entry->apply(cfg, value);
}

PipelineConfig load_pipeline_config(const std::string& path) {
  PipelineConfig cfg;
  for (const auto& [key, value] : read_key_values(path)) apply_config_kv(cfg, key, value);
  return cfg;
}

void apply_env_overrides(PipelineConfig& cfg) {
  for (const KeyEntry& e : registry()) {
    const char* value = std::getenv(env_name(e.key).c_str());
    if (value != nullptr) e.apply(cfg, value);
  }
}

void save_pipeline_config(const PipelineConfig& cfg, const std::string& path) {
  KeyValueWriter writer(path);
  for (const KeyEntry& e : registry()) writer.put(e.key, e.render(cfg));
}

}  // namespace cgt
