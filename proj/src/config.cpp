#include "mama/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "mama/dataset.hpp"
#include "mama/errors.hpp"

namespace mama {

namespace {

enum class Kind { Int, Real, Bool, Text };

struct KeyDef {
  const char* key;
  Kind kind;
  const char* desk;
  const char* full;  // nullptr = same as desk
};

// clang-format off
const KeyDef kKeys[] = {
    {"run.seed", Kind::Int, "0", nullptr},

    {"data.split_train", Kind::Real, "0.7", nullptr},
    {"data.split_val", Kind::Real, "0.1", nullptr},
    {"data.split_test", Kind::Real, "0.2", nullptr},

    {"synth.num_patients", Kind::Int, "50", nullptr},
    {"synth.studies_per_patient", Kind::Int, "2", nullptr},
    {"synth.views_per_study", Kind::Int, "4", nullptr},
    {"synth.image_size", Kind::Int, "32", nullptr},
    {"synth.grid_rows", Kind::Int, "4", nullptr},
    {"synth.grid_cols", Kind::Int, "4", nullptr},
    {"synth.num_classes", Kind::Int, "4", nullptr},
    {"synth.feature_strength", Kind::Real, "0.4", nullptr},
    {"synth.noise_level", Kind::Real, "0.03", nullptr},
    {"synth.field_amplitude", Kind::Real, "0.06", nullptr},
    {"synth.class_prior", Kind::Text, "", nullptr},
    {"synth.target", Kind::Text, "density", nullptr},

    {"model.embed_dim", Kind::Int, "64", "512"},
    {"model.image_size", Kind::Int, "32", "518"},
    {"model.grid_rows", Kind::Int, "4", "37"},
    {"model.grid_cols", Kind::Int, "4", "37"},
    {"model.vision_width", Kind::Int, "32", "768"},
    {"model.vision_layers", Kind::Int, "2", "12"},
    {"model.text_width", Kind::Int, "32", "768"},
    {"model.text_layers", Kind::Int, "2", "12"},
    {"model.mlp_ratio", Kind::Int, "2", "4"},
    {"model.vocab_size", Kind::Int, "2048", "32768"},
    {"model.max_text_tokens", Kind::Int, "128", "256"},
    {"model.lora_rank", Kind::Int, "8", nullptr},
    {"model.lora_alpha", Kind::Real, "16", nullptr},
    {"model.use_lora", Kind::Bool, "true", nullptr},
    {"model.text_kind", Kind::Text, "decoder_only", nullptr},

    {"caption.style", Kind::Text, "structured", nullptr},
    {"caption.mask_prob", Kind::Real, "0.8", nullptr},
    {"caption.template", Kind::Text, "", nullptr},

    {"views.strategy", Kind::Text, "intra_study", nullptr},

    {"augment.flip_prob", Kind::Real, "0.5", nullptr},
    {"augment.rotate_prob", Kind::Real, "0.5", nullptr},
    {"augment.max_rotation_deg", Kind::Real, "10", nullptr},
    {"augment.crop_prob", Kind::Real, "0.5", nullptr},
    {"augment.crop_scale_min", Kind::Real, "0.8", nullptr},
    {"augment.crop_scale_max", Kind::Real, "1.0", nullptr},
    {"augment.jitter_prob", Kind::Real, "0.5", nullptr},
    {"augment.brightness", Kind::Real, "0.1", nullptr},
    {"augment.contrast", Kind::Real, "0.1", nullptr},

    {"train.lr", Kind::Real, "0.01", "4e-05"},
    {"train.weight_decay", Kind::Real, "0.01", "0.1"},
    {"train.total_steps", Kind::Int, "500", "40000"},
    {"train.warmup_steps", Kind::Int, "50", "4000"},
    {"train.batch_size", Kind::Int, "16", "144"},
    {"train.optimizer", Kind::Text, "adamw", nullptr},
    {"train.beta1", Kind::Real, "0.9", nullptr},
    {"train.beta2", Kind::Real, "0.999", nullptr},
    {"train.eps", Kind::Real, "1e-08", nullptr},
    {"train.momentum", Kind::Real, "0.9", nullptr},
    {"train.clip_norm", Kind::Real, "1.0", nullptr},
    {"train.checkpoint_every", Kind::Int, "0", "1000"},

    {"loss.tau1", Kind::Real, "0.5", nullptr},
    {"loss.tau2", Kind::Real, "0.07", nullptr},
    {"loss.tau_local", Kind::Real, "0.1", nullptr},
    {"loss.delta", Kind::Int, "100", "8000"},
    {"loss.w_max", Kind::Real, "1.0", nullptr},
    {"loss.use_vv", Kind::Bool, "true", nullptr},
    {"loss.symmetric_vt", Kind::Bool, "true", nullptr},
    {"loss.use_sla", Kind::Bool, "true", nullptr},
    {"loss.full_2b_negatives", Kind::Bool, "false", nullptr},

    {"eval.mode", Kind::Text, "zeroshot", nullptr},
    {"eval.fraction", Kind::Real, "1.0", nullptr},
    {"eval.target", Kind::Text, "density", nullptr},
    {"eval.num_classes", Kind::Int, "4", nullptr},
    {"eval.prob_temperature", Kind::Real, "0.1", nullptr},
    {"eval.probe_steps", Kind::Int, "300", nullptr},
    {"eval.probe_lr", Kind::Real, "0.5", nullptr},
    {"eval.probe_weight_decay", Kind::Real, "0.0001", nullptr},

    {"finetune.lr", Kind::Real, "0.05", "0.0005"},
    {"finetune.weight_decay", Kind::Real, "0.001", nullptr},
    {"finetune.total_steps", Kind::Int, "150", "8000"},
    {"finetune.warmup_steps", Kind::Int, "10", "100"},
    {"finetune.batch_size", Kind::Int, "16", "36"},
    {"finetune.optimizer", Kind::Text, "sgd", nullptr},
    {"finetune.momentum", Kind::Real, "0.9", nullptr},

    {"simmap.sentence_index", Kind::Int, "-1", nullptr},
    {"simmap.segment", Kind::Text, "FINDINGS", nullptr},
    {"simmap.format", Kind::Text, "csv", nullptr},
    {"simmap.normalize", Kind::Bool, "true", nullptr},
    {"simmap.limit", Kind::Int, "0", nullptr},
};
// clang-format on

const KeyDef* find_key(std::string_view key) {
  for (const auto& k : kKeys)
    if (key == k.key) return &k;
  return nullptr;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_bool(std::string_view v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return out = true, true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return out = false, true;
  return false;
}

template <typename T>
bool parse_number(std::string_view v, T& out) {
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  return ec == std::errc() && p == v.data() + v.size();
}

bool parse_real(std::string_view v, double& out) {
  // from_chars for double is missing from older libstdc++; strtod with a full-consumption check
  if (v.empty()) return false;
  const std::string s(v);
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

}  // namespace

RunConfig RunConfig::preset(std::string_view name) {
  if (name != "desk" && name != "full") throw ConfigError("unknown preset '" + std::string(name) + "'");
  RunConfig c;
  for (const auto& k : kKeys) c.values_[k.key] = (name == "full" && k.full) ? k.full : k.desk;
  return c;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const KeyDef* def = find_key(key);
  if (!def) throw ConfigError("unknown config key '" + key + "'");
  const std::string value(trim(raw));
  bool ok = true;
  switch (def->kind) {
    case Kind::Int: {
      std::int64_t v;
      ok = parse_number(value, v);
      break;
    }
    case Kind::Real: {
      double v;
      ok = parse_real(value, v);
      break;
    }
    case Kind::Bool: {
      bool v;
      ok = parse_bool(value, v);
      break;
    }
    case Kind::Text: break;
  }
  if (!ok) throw ConfigError("bad value '" + value + "' for " + key);
  values_[key] = value;
}

void RunConfig::merge_text(std::string_view text, const std::string& origin) {
  std::string section;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string name(trim(line.substr(0, eq)));
    const std::string key = section.empty() ? name : section + "." + name;
    try {
      set(key, std::string(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) { merge_text(read_text_file(path), path.string()); }

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

bool RunConfig::contains(const std::string& key) const { return values_.contains(key); }

double RunConfig::get_real(const std::string& key) const {
  double v;
  if (!parse_real(get(key), v)) throw ConfigError(key + " is not a number");
  return v;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  std::int64_t v;
  if (!parse_number(get(key), v)) throw ConfigError(key + " is not an integer");
  return v;
}

std::size_t RunConfig::get_size(const std::string& key) const {
  const auto v = get_int(key);
  if (v < 0) throw ConfigError(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  std::uint64_t v;
  if (!parse_number(get(key), v)) throw ConfigError(key + " must be a non-negative integer");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  bool v;
  if (!parse_bool(get(key), v)) throw ConfigError(key + " is not a boolean");
  return v;
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& k : kKeys) out.emplace_back(k.key);
  return out;
}

std::string RunConfig::echo() const {
  std::string out, section;
  for (const auto& k : kKeys) {
    const std::string key = k.key;
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + get(key) + "\n";
  }
  return out;
}

EncoderConfig RunConfig::encoder() const {
  EncoderConfig c;
  c.embed_dim = get_size("model.embed_dim");
  c.image_size = get_size("model.image_size");
  c.grid_rows = get_size("model.grid_rows");
  c.grid_cols = get_size("model.grid_cols");
  c.vision_width = get_size("model.vision_width");
  c.vision_layers = get_size("model.vision_layers");
  c.text_width = get_size("model.text_width");
  c.text_layers = get_size("model.text_layers");
  c.mlp_ratio = get_size("model.mlp_ratio");
  c.vocab_size = get_size("model.vocab_size");
  c.max_text_tokens = get_size("model.max_text_tokens");
  c.lora_rank = get_size("model.lora_rank");
  c.lora_alpha = get_real("model.lora_alpha");
  c.use_lora = get_bool("model.use_lora");
  c.text_kind = parse_text_encoder_kind(get("model.text_kind"));
  c.validate();
  return c;
}

TrainConfig RunConfig::train() const {
  TrainConfig c;
  c.lr = get_real("train.lr");
  c.weight_decay = get_real("train.weight_decay");
  c.total_steps = get_int("train.total_steps");
  c.warmup_steps = get_int("train.warmup_steps");
  c.batch_size = get_size("train.batch_size");
  c.seed = seed();
  c.optimizer = parse_optimizer(get("train.optimizer"));
  c.beta1 = get_real("train.beta1");
  c.beta2 = get_real("train.beta2");
  c.eps = get_real("train.eps");
  c.momentum = get_real("train.momentum");
  c.clip_norm = get_real("train.clip_norm");
  c.temperatures.tau1 = get_real("loss.tau1");
  c.temperatures.tau2 = get_real("loss.tau2");
  c.temperatures.tau_local = get_real("loss.tau_local");
  c.loss.delta = get_int("loss.delta");
  c.loss.w_max = get_real("loss.w_max");
  c.loss.use_vv = get_bool("loss.use_vv");
  c.loss.symmetric_vt = get_bool("loss.symmetric_vt");
  c.loss.use_sla = get_bool("loss.use_sla");
  c.loss.full_2b_negatives = get_bool("loss.full_2b_negatives");
  c.validate();
  if (c.loss.delta > c.total_steps) throw ConfigError("loss.delta must not exceed train.total_steps");
  return c;
}

SynthConfig RunConfig::synth() const {
  SynthConfig c;
  c.num_patients = get_size("synth.num_patients");
  c.studies_per_patient = get_size("synth.studies_per_patient");
  c.views_per_study = get_size("synth.views_per_study");
  c.image_size = get_size("synth.image_size");
  c.grid_rows = get_size("synth.grid_rows");
  c.grid_cols = get_size("synth.grid_cols");
  c.num_classes = get_size("synth.num_classes");
  c.feature_strength = get_real("synth.feature_strength");
  c.noise_level = get_real("synth.noise_level");
  c.field_amplitude = get_real("synth.field_amplitude");
  c.target = parse_synth_target(get("synth.target"));
  c.seed = seed();
  const std::string prior = get("synth.class_prior");
  std::stringstream ss(prior);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v;
    if (!parse_real(trim(item), v)) throw ConfigError("synth.class_prior: bad weight '" + item + "'");
    c.class_prior.push_back(v);
  }
  c.validate();
  return c;
}

AugmentConfig RunConfig::augment() const {
  AugmentConfig c;
  c.flip_prob = get_real("augment.flip_prob");
  c.rotate_prob = get_real("augment.rotate_prob");
  c.max_rotation_deg = get_real("augment.max_rotation_deg");
  c.crop_prob = get_real("augment.crop_prob");
  c.crop_scale_min = get_real("augment.crop_scale_min");
  c.crop_scale_max = get_real("augment.crop_scale_max");
  c.jitter_prob = get_real("augment.jitter_prob");
  c.brightness = get_real("augment.brightness");
  c.contrast = get_real("augment.contrast");
  for (double p : {c.flip_prob, c.rotate_prob, c.crop_prob, c.jitter_prob})
    if (p < 0.0 || p > 1.0) throw ConfigError("augmentation probabilities must lie in [0, 1]");
  if (!(c.crop_scale_min > 0.0 && c.crop_scale_min <= c.crop_scale_max && c.crop_scale_max <= 1.0))
    throw ConfigError("crop scales must satisfy 0 < min <= max <= 1");
  return c;
}

SamplingStrategy RunConfig::strategy() const { return parse_sampling_strategy(get("views.strategy")); }

SplitSpec RunConfig::split() const {
  return SplitSpec{get_real("data.split_train"), get_real("data.split_val"), get_real("data.split_test"), seed()};
}

ProbeConfig RunConfig::probe() const {
  return ProbeConfig{get_size("eval.probe_steps"), get_real("eval.probe_lr"), get_real("eval.probe_weight_decay")};
}

FinetuneConfig RunConfig::finetune() const {
  FinetuneConfig f;
  TrainConfig& t = f.train;
  t.lr = get_real("finetune.lr");
  t.weight_decay = get_real("finetune.weight_decay");
  t.total_steps = get_int("finetune.total_steps");
  t.warmup_steps = get_int("finetune.warmup_steps");
  t.batch_size = get_size("finetune.batch_size");
  t.optimizer = parse_optimizer(get("finetune.optimizer"));
  t.momentum = get_real("finetune.momentum");
  t.loss.delta = 0;
  t.seed = seed();
  t.validate();
  return f;
}

SynthTarget RunConfig::target() const { return parse_synth_target(get("eval.target")); }

std::size_t RunConfig::num_classes() const {
  const std::size_t k = get_size("eval.num_classes");
  if (k < 2) throw ConfigError("eval.num_classes must be at least 2");
  return k;
}

ZeroShotSpec RunConfig::zero_shot() const {
  ZeroShotSpec s = ZeroShotSpec::for_target(target(), num_classes());
  s.temperature_for_probs = get_real("eval.prob_temperature");
  if (!(s.temperature_for_probs > 0)) throw ConfigError("eval.prob_temperature must be positive");
  return s;
}

}  // namespace mama
