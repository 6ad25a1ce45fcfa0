#include "mama/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

#include "mama/errors.hpp"

namespace mama {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adamw"; }

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adamw") return OptimizerKind::AdamW;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (warmup_steps < 0 || warmup_steps > total_steps) throw ConfigError("warmup_steps must lie in [0, total_steps]");
  if (loss.delta < 0) throw ConfigError("delta must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  temperatures.validate();
}

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.lr = 1e-2;
  c.weight_decay = 0.01;
  c.total_steps = 500;
  c.warmup_steps = 50;
  c.batch_size = 16;
  c.loss.delta = 100;
  return c;
}

double lr_at(std::int64_t step, const TrainConfig& c) {
  if (step < 0 || step > c.total_steps)
    throw InputError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(c.total_steps) + "]");
  if (step < c.warmup_steps) return c.lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  const std::int64_t span = c.total_steps - c.warmup_steps;
  if (span == 0) return c.lr;
  const double progress = static_cast<double>(step - c.warmup_steps) / static_cast<double>(span);
  return c.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainState init_train_state(const EncoderConfig& encoder, const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.params = init_encoder_params(encoder, derive_seed(config.seed, 1));
  s.params.add(kTau2Param, Matrix(1, 1, config.temperatures.tau2), true, false);
  round_to_float(s.params);
  s.rng = Rng(derive_seed(config.seed, 2));
  return s;
}

TokenBatch tokenize_batch(const PairBatch& batch, const EncoderConfig& encoder) {
  TokenBatch out;
  out.primary = batch.primary_images;
  out.positive = batch.positive_images;
  for (const auto& cap : batch.captions) {
    auto tok = tokenize(cap, encoder.max_text_tokens, encoder.vocab_size);
    out.tokens.push_back(std::move(tok.ids));
    out.sentence_counts.push_back(tok.sentence_count);
  }
  return out;
}

namespace {

// Encoder graphs for one batch slot. Held by pointer: bindings keep
// references to the tapes.
struct SlotGraphs {
  ad::Tape image_tape, text_tape;
  ParamBinding image_params, text_params;
  ad::Var v, v_pos, patches, t, sentences;

  SlotGraphs(const ParamStore& params, bool with_grad)
      : image_params(image_tape, params, with_grad), text_params(text_tape, params, with_grad) {}
};

void run_slots(std::size_t n, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void backward_from(ad::Tape& tape, const std::vector<ad::Var>& roots, const std::vector<ad::Var>& leaves) {
  std::vector<ad::Var> r;
  std::vector<Matrix> seeds;
  for (std::size_t i = 0; i < roots.size(); ++i) {
    if (!roots[i].requires_grad() || leaves[i].grad().empty()) continue;
    r.push_back(roots[i]);
    seeds.push_back(leaves[i].grad());
  }
  if (!r.empty()) tape.backward(r, seeds);
}

}  // namespace

LossBreakdown compute_gradients(const ParamStore& params, const TokenBatch& batch, const EncoderConfig& encoder,
                                const TrainConfig& config, std::int64_t step,
                                std::map<std::string, Matrix>* gradients) {
  const std::size_t b = batch.primary.size();
  if (b == 0 || batch.positive.size() != b || batch.tokens.size() != b || batch.sentence_counts.size() != b)
    throw ShapeError("compute_gradients: inconsistent batch");
  const bool with_grad = gradients != nullptr;

  std::vector<std::unique_ptr<SlotGraphs>> slots(b);
  run_slots(b, [&](std::size_t i) {
    auto g = std::make_unique<SlotGraphs>(params, with_grad);
    const GraphEmbedding prim = encode_image_graph(g->image_params, batch.primary[i], encoder);
    const GraphEmbedding pos = encode_image_graph(g->image_params, batch.positive[i], encoder);
    g->v = prim.global;
    g->v_pos = pos.global;
    const auto prow = patch_rows(prim.roles);
    g->patches = ad::gather_rows(prim.local, prow);
    const GraphEmbedding txt = encode_text_graph(g->text_params, batch.tokens[i], encoder);
    g->t = txt.global;
    const auto srow = sentence_rows(txt.roles, batch.sentence_counts[i]);
    g->sentences = ad::gather_rows(txt.local, srow);
    slots[i] = std::move(g);
  });

  // Loss graph over copies of the embeddings; its leaf gradients seed the
  // per-slot encoder graphs.
  ad::Tape loss_tape;
  std::vector<ad::Var> lv, lvp, lt, ls, lp;
  for (const auto& s : slots) {
    lv.push_back(loss_tape.variable(s->v.value()));
    lvp.push_back(loss_tape.variable(s->v_pos.value()));
    lt.push_back(loss_tape.variable(s->t.value()));
    ls.push_back(loss_tape.variable(s->sentences.value()));
    lp.push_back(loss_tape.variable(s->patches.value()));
  }
  const Parameter& tau = params.at(kTau2Param);
  ad_loss::GraphInputs in{ad::concat_rows(lv), ad::concat_rows(lvp), ad::concat_rows(lt), ls, lp,
                          loss_tape.external(tau.value, with_grad && tau.trainable)};
  const ad_loss::GraphLoss loss = ad_loss::total_loss(in, config.temperatures, step, config.loss);
  if (!with_grad) return loss.breakdown;

  loss_tape.backward(loss.total);
  run_slots(b, [&](std::size_t i) {
    SlotGraphs& g = *slots[i];
    backward_from(g.image_tape, {g.v, g.v_pos, g.patches}, {lv[i], lvp[i], lp[i]});
    backward_from(g.text_tape, {g.t, g.sentences}, {lt[i], ls[i]});
  });

  // Fixed-order reduction keeps results independent of thread timing.
  gradients->clear();
  for (const auto& s : slots) {
    s->image_params.collect_gradients(*gradients);
    s->text_params.collect_gradients(*gradients);
  }
  if (!in.tau2.grad().empty()) (*gradients)[kTau2Param] = in.tau2.grad();
  return loss.breakdown;
}

namespace {
double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }
}  // namespace

void apply_update(TrainState& state, std::map<std::string, Matrix>& gradients, double lr, const TrainConfig& c) {
  if (c.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : gradients)
      for (double v : g.values()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > c.clip_norm) {
      const double s = c.clip_norm / norm;
      for (auto& [name, g] : gradients)
        for (double& v : g.values()) v *= s;
    }
  }
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, g] : gradients) {
    Parameter& p = state.params.at(name);
    if (!p.trainable) continue;
    Matrix& m = state.moment1.try_emplace(name, p.value.rows(), p.value.cols()).first->second;
    Matrix& w = p.value;
    const double decay = p.decay ? c.weight_decay : 0.0;
    if (c.optimizer == OptimizerKind::AdamW) {
      Matrix& v = state.moment2.try_emplace(name, p.value.rows(), p.value.cols()).first->second;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = to_float(c.beta1 * m[i] + (1.0 - c.beta1) * g[i]);
        v[i] = to_float(c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i]);
        const double step = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
        w[i] = to_float(w[i] - lr * (step + decay * w[i]));
      }
    } else {
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = to_float(c.momentum * m[i] + g[i] + decay * w[i]);
        w[i] = to_float(w[i] - lr * m[i]);
      }
    }
  }
  if (state.params.contains(kTau2Param)) {
    double& tau = state.params.value(kTau2Param)[0];
    tau = to_float(std::clamp(tau, kTau2Min, kTau2Max));
  }
}

LossBreakdown train_step(TrainState& state, const TokenBatch& batch, const EncoderConfig& encoder,
                         const TrainConfig& config) {
  const double lr = lr_at(state.step, config);
  std::map<std::string, Matrix> grads;
  LossBreakdown b = compute_gradients(state.params, batch, encoder, config, state.step, &grads);
  const auto bad = [](double v) { return !std::isfinite(v); };
  if (bad(b.total) || bad(b.l_vv) || bad(b.l_vt_primary) || bad(b.l_vt_positive) || bad(b.l_local_v) ||
      bad(b.l_local_t))
    throw NumericError("non-finite loss at step " + std::to_string(state.step) + ": " +
                       format_metrics_row(state.step, lr, b));
  for (const auto& [name, g] : grads)
    if (!all_finite(g)) throw NumericError("non-finite gradient for '" + name + "' at step " +
                                           std::to_string(state.step));
  apply_update(state, grads, lr, config);
  ++state.step;
  return b;
}

CaptionFn make_caption_fn(CaptionStyle style, const CaptionTemplate& tmpl, double mask_prob) {
  switch (style) {
    case CaptionStyle::ClipStyle: return [](const ImageRecord& r, Rng&) { return build_clip_style_caption(r); };
    case CaptionStyle::Tabular: return [](const ImageRecord& r, Rng&) { return build_tabular_caption(r); };
    case CaptionStyle::Structured: break;
  }
  return [&tmpl, mask_prob](const ImageRecord& r, Rng& rng) {
    return build_structured_caption(r, tmpl, mask_prob, rng, {});
  };
}

void pretrain(TrainState& state, const std::vector<Study>& studies, const ImageLoader& load,
              const EncoderConfig& encoder, const TrainConfig& config, const PretrainSetup& setup,
              std::int64_t end_step, const StepCallback& on_step) {
  config.validate();
  if (end_step > config.total_steps) throw ConfigError("end step beyond total_steps");
  const CaptionTemplate& tmpl = setup.caption_template ? *setup.caption_template : CaptionTemplate::default_template();
  const CaptionFn caption = make_caption_fn(setup.caption_style, tmpl, setup.mask_prob);
  while (state.step < end_step) {
    const PairBatch batch =
        assemble_batch(studies, config.batch_size, setup.strategy, caption, load, setup.augment, state.rng);
    const std::int64_t step = state.step;
    const double lr = lr_at(step, config);
    const LossBreakdown b = train_step(state, tokenize_batch(batch, encoder), encoder, config);
    if (on_step) on_step(step, lr, b);
  }
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string format_metrics_row(std::int64_t step, double lr, const LossBreakdown& b) {
  std::string row = std::to_string(step);
  for (double v : {lr, b.l_vv, b.l_vt_primary, b.l_vt_positive, b.l_local_v, b.l_local_t, b.w, b.total})
    row += "," + format_real(v);
  return row;
}

// ---- arrays -------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'A', 'M', 'A'};
constexpr std::uint32_t kArrayVersion = 1;
constexpr const char* kManifestFormat = "mama-checkpoint/1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw IoError("truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace

void write_array(const std::filesystem::path& path, const Matrix& m) {
  std::string out(kMagic, 4);
  put_u32(out, kArrayVersion);
  put_u32(out, 2);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

Matrix read_array(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string in = ss.str();
  try {
    if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) throw IoError("bad magic");
    std::size_t pos = 4;
    if (get_u32(in, pos) != kArrayVersion) throw IoError("unsupported array version");
    const std::uint32_t ndim = get_u32(in, pos);
    if (ndim == 0 || ndim > 2) throw IoError("unsupported rank " + std::to_string(ndim));
    std::size_t rows = 1, cols = get_u32(in, pos);
    if (ndim == 2) {
      rows = cols;
      cols = get_u32(in, pos);
    }
    if (in.size() != pos + 4 * rows * cols) throw IoError("payload size does not match the shape header");
    Matrix m(rows, cols);
    for (double& v : m.values()) v = static_cast<double>(std::bit_cast<float>(get_u32(in, pos)));
    return m;
  } catch (const IoError& e) {
    throw IoError("corrupt array '" + path.string() + "': " + e.what());
  }
}

// ---- manifest -------------------------------------------------------------------------

std::string encoder_config_echo(const EncoderConfig& c) {
  std::ostringstream os;
  os << "embed_dim = " << c.embed_dim << "\n"
     << "image_size = " << c.image_size << "\n"
     << "grid_rows = " << c.grid_rows << "\n"
     << "grid_cols = " << c.grid_cols << "\n"
     << "vision_width = " << c.vision_width << "\n"
     << "vision_layers = " << c.vision_layers << "\n"
     << "text_width = " << c.text_width << "\n"
     << "text_layers = " << c.text_layers << "\n"
     << "mlp_ratio = " << c.mlp_ratio << "\n"
     << "vocab_size = " << c.vocab_size << "\n"
     << "max_text_tokens = " << c.max_text_tokens << "\n"
     << "lora_rank = " << c.lora_rank << "\n"
     << "lora_alpha = " << format_real(c.lora_alpha) << "\n"
     << "use_lora = " << (c.use_lora ? "true" : "false") << "\n"
     << "text_kind = " << to_string(c.text_kind) << "\n";
  return os.str();
}

namespace {

std::string param_file(const std::string& prefix, const std::string& name) { return prefix + "." + name + ".bin"; }

std::pair<std::string, std::string> split_kv(const std::string& line) {
  const auto eq = line.find(" = ");
  if (eq == std::string::npos) throw VersionError("malformed manifest line '" + line + "'");
  return {line.substr(0, eq), line.substr(eq + 3)};
}

std::size_t to_size(const std::string& s) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw VersionError("manifest value '" + s + "' is not an integer");
  }
}

EncoderConfig parse_encoder_echo(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw VersionError(std::string("manifest lacks encoder key '") + k + "'");
    return it->second;
  };
  EncoderConfig c;
  c.embed_dim = to_size(get("embed_dim"));
  c.image_size = to_size(get("image_size"));
  c.grid_rows = to_size(get("grid_rows"));
  c.grid_cols = to_size(get("grid_cols"));
  c.vision_width = to_size(get("vision_width"));
  c.vision_layers = to_size(get("vision_layers"));
  c.text_width = to_size(get("text_width"));
  c.text_layers = to_size(get("text_layers"));
  c.mlp_ratio = to_size(get("mlp_ratio"));
  c.vocab_size = to_size(get("vocab_size"));
  c.max_text_tokens = to_size(get("max_text_tokens"));
  c.lora_rank = to_size(get("lora_rank"));
  c.lora_alpha = std::stod(get("lora_alpha"));
  c.use_lora = get("use_lora") == "true";
  c.text_kind = parse_text_encoder_kind(get("text_kind"));
  return c;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& dir, const EncoderConfig& encoder,
                     const std::string& config_echo) {
  namespace fs = std::filesystem;
  const fs::path target = fs::absolute(dir);
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  const fs::path old = target.parent_path() / (target.filename().string() + ".old");
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp);

  std::ostringstream m;
  m << "format = " << kManifestFormat << "\n"
    << "step = " << state.step << "\n"
    << "rng = " << serialize_rng(state.rng) << "\n"
    << "[encoder]\n"
    << encoder_config_echo(encoder);
  for (const auto& [name, p] : state.params.all()) {
    m << "[param " << name << "]\n"
      << "shape = " << p.value.rows() << "x" << p.value.cols() << "\n"
      << "trainable = " << (p.trainable ? 1 : 0) << "\n"
      << "decay = " << (p.decay ? 1 : 0) << "\n";
    write_array(tmp / param_file("param", name), p.value);
  }
  for (const auto& [prefix, moments] : {std::pair{"adam_m", &state.moment1}, std::pair{"adam_v", &state.moment2}})
    for (const auto& [name, mat] : *moments) {
      m << "[" << prefix << " " << name << "]\n";
      write_array(tmp / param_file(prefix, name), mat);
    }
  m << "[run-config]\n" << config_echo;
  {
    std::ofstream f(tmp / "manifest.txt", std::ios::binary);
    f << m.str();
    if (!f) throw IoError("cannot write manifest in '" + tmp.string() + "'");
  }
  fs::remove_all(old, ec);
  if (fs::exists(target)) fs::rename(target, old);
  fs::rename(tmp, target);
  fs::remove_all(old, ec);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const EncoderConfig* expected) {
  std::ifstream f(dir / "manifest.txt", std::ios::binary);
  if (!f) throw IoError("no checkpoint manifest in '" + dir.string() + "'");
  LoadedCheckpoint out;
  std::map<std::string, std::string> top, enc;
  struct Entry {
    std::string kind, name;
    std::map<std::string, std::string> kv;
  };
  std::vector<Entry> entries;
  std::string section, line;
  std::ostringstream echo;
  bool in_echo = false;
  while (std::getline(f, line)) {
    if (in_echo) {
      echo << line << "\n";
      continue;
    }
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      if (section == "run-config") {
        in_echo = true;
      } else if (section != "encoder") {
        const auto sp = section.find(' ');
        if (sp == std::string::npos) throw VersionError("unknown manifest section '" + section + "'");
        entries.push_back({section.substr(0, sp), section.substr(sp + 1), {}});
      }
      continue;
    }
    auto [k, v] = split_kv(line);
    if (section.empty()) top[k] = v;
    else if (section == "encoder") enc[k] = v;
    else entries.back().kv[k] = v;
  }
  if (top["format"] != kManifestFormat)
    throw VersionError("unsupported checkpoint format '" + top["format"] + "'");
  out.encoder = parse_encoder_echo(enc);
  if (expected && encoder_config_echo(*expected) != encoder_config_echo(out.encoder))
    throw VersionError("checkpoint encoder config does not match the requested config");
  out.config_echo = echo.str();
  out.state.step = static_cast<std::int64_t>(to_size(top["step"]));
  out.state.rng = deserialize_rng(top["rng"]);

  for (const auto& e : entries) {
    const Matrix value = read_array(dir / param_file(e.kind, e.name));
    if (e.kind == "param") {
      const std::string shape = std::to_string(value.rows()) + "x" + std::to_string(value.cols());
      if (e.kv.count("shape") == 0 || e.kv.at("shape") != shape)
        throw IoError("array for parameter '" + e.name + "' has shape " + shape + ", manifest disagrees");
      out.state.params.add(e.name, value, e.kv.count("trainable") && e.kv.at("trainable") == "1",
                           e.kv.count("decay") && e.kv.at("decay") == "1");
    } else if (e.kind == "adam_m") {
      out.state.moment1[e.name] = value;
    } else if (e.kind == "adam_v") {
      out.state.moment2[e.name] = value;
    } else {
      throw VersionError("unknown manifest entry kind '" + e.kind + "'");
    }
  }
  return out;
}

}  // namespace mama
