#include "mama/encoder.hpp"

#include <cmath>

#include "mama/errors.hpp"
#include "mama/kernels.hpp"
#include "mama/random.hpp"

namespace mama {

std::string to_string(TextEncoderKind k) {
  return k == TextEncoderKind::DecoderOnly ? "decoder_only" : "bidirectional";
}

TextEncoderKind parse_text_encoder_kind(std::string_view s) {
  if (s == "decoder_only") return TextEncoderKind::DecoderOnly;
  if (s == "bidirectional") return TextEncoderKind::Bidirectional;
  throw ConfigError("unknown text encoder kind '" + std::string(s) + "'");
}

void EncoderConfig::validate() const {
  if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
  if (grid_rows == 0 || grid_cols == 0) throw ConfigError("patch grid must be at least 1x1");
  if (image_size % grid_rows != 0 || image_size % grid_cols != 0)
    throw ConfigError("image_size must be divisible by the patch grid");
  if (vision_width == 0 || text_width == 0) throw ConfigError("encoder widths must be positive");
  if (max_text_tokens < 3) throw ConfigError("max_text_tokens must be at least 3");
  if (vocab_size <= static_cast<std::size_t>(kFirstWordId)) throw ConfigError("vocab_size too small");
  if (use_lora && lora_rank > text_width) throw ConfigError("lora_rank exceeds the adapted matrix dims");
}

// ---- ParamStore --------------------------------------------------------------

bool operator==(const Parameter& a, const Parameter& b) {
  return a.value == b.value && a.trainable == b.trainable && a.decay == b.decay;
}

void ParamStore::add(const std::string& name, Matrix value, bool trainable, bool decay) {
  params_[name] = Parameter{std::move(value), trainable, decay};
}

const Parameter& ParamStore::at(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) throw InputError("unknown parameter '" + name + "'");
  return it->second;
}

Parameter& ParamStore::at(const std::string& name) {
  const auto it = params_.find(name);
  if (it == params_.end()) throw InputError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : params_) out.push_back(k);
  return out;
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [k, p] : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

bool ParamStore::operator==(const ParamStore& other) const { return params_ == other.params_; }

void round_to_float(ParamStore& params) {
  for (auto& [name, p] : params.all())
    for (double& v : p.value.values()) v = static_cast<double>(static_cast<float>(v));
}

namespace {

Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = normal(rng, 0.0, stddev);
  return m;
}

void add_linear(ParamStore& ps, const std::string& name, std::size_t out, std::size_t in, bool trainable,
                Rng& rng) {
  ps.add(name + ".weight", random_normal(out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng), trainable,
         true);
  ps.add(name + ".bias", Matrix(1, out), trainable, false);
}

void add_layer_norm(ParamStore& ps, const std::string& name, std::size_t width, bool trainable) {
  ps.add(name + ".gamma", Matrix(1, width, 1.0), trainable, false);
  ps.add(name + ".beta", Matrix(1, width), trainable, false);
}

void add_blocks(ParamStore& ps, const std::string& prefix, std::size_t layers, std::size_t width,
                std::size_t mlp_ratio, bool trainable, std::size_t lora_rank, Rng& rng) {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string b = prefix + ".blocks." + std::to_string(l);
    add_layer_norm(ps, b + ".ln1", width, trainable);
    for (const char* proj : {"q", "k", "v", "o"}) {
      const std::string name = b + ".attn." + proj;
      add_linear(ps, name, width, width, trainable, rng);
      if (lora_rank > 0) {
        ps.add(name + ".lora_a",
               random_normal(lora_rank, width, 1.0 / std::sqrt(static_cast<double>(width)), rng), true, true);
        ps.add(name + ".lora_b", Matrix(width, lora_rank), true, true);
      }
    }
    add_layer_norm(ps, b + ".ln2", width, trainable);
    add_linear(ps, b + ".mlp.fc1", width * mlp_ratio, width, trainable, rng);
    add_linear(ps, b + ".mlp.fc2", width, width * mlp_ratio, trainable, rng);
  }
}

}  // namespace

ParamStore init_encoder_params(const EncoderConfig& c, std::uint64_t seed) {
  c.validate();
  ParamStore ps;
  Rng rng(seed);
  const std::size_t patch_pixels = c.patch_height() * c.patch_width();
  const std::size_t vw = c.vision_width;
  add_linear(ps, "vision.patch", vw, patch_pixels, true, rng);
  ps.add("vision.cls", random_normal(1, vw, 0.02, rng), true, false);
  ps.add("vision.pos", random_normal(c.patch_count() + 1, vw, 0.02, rng), true, false);
  add_blocks(ps, "vision", c.vision_layers, vw, c.mlp_ratio, true, 0, rng);
  add_layer_norm(ps, "vision.ln_final", vw, true);
  add_linear(ps, "vision.global_proj", c.embed_dim, vw, true, rng);
  add_linear(ps, "vision.local_proj", c.embed_dim, vw, true, rng);

  const bool text_trainable = !c.use_lora;
  const std::size_t tw = c.text_width;
  ps.add("text.token_embed", random_normal(c.vocab_size, tw, 1.0, rng), text_trainable, false);
  ps.add("text.pos", random_normal(c.max_text_tokens, tw, 0.1, rng), text_trainable, false);
  add_blocks(ps, "text", c.text_layers, tw, c.mlp_ratio, text_trainable, c.use_lora ? c.lora_rank : 0, rng);
  add_layer_norm(ps, "text.ln_final", tw, text_trainable);
  add_linear(ps, "text.global_proj", c.embed_dim, tw, true, rng);
  add_linear(ps, "text.local_proj", c.embed_dim, tw, true, rng);
  round_to_float(ps);
  return ps;
}

// ---- ParamBinding --------------------------------------------------------------

ad::Var ParamBinding::get(const std::string& name) {
  const auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Parameter& p = params_.at(name);
  ad::Var v = tape_.external(p.value, with_grad_ && p.trainable);
  bound_.emplace(name, v);
  return v;
}

void ParamBinding::collect_gradients(std::map<std::string, Matrix>& out) const {
  for (const auto& [name, var] : bound_) {
    if (!var.requires_grad() || var.grad().empty()) continue;
    auto [it, inserted] = out.try_emplace(name, var.grad());
    if (!inserted) {
      Matrix& acc = it->second;
      const Matrix& g = var.grad();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
  }
}

// ---- forward ---------------------------------------------------------------------

ad::Var lora_linear(ad::Var x, ad::Var weight, ad::Var bias, const ad::Var* lora_a, const ad::Var* lora_b,
                    double scale) {
  ad::Var y = ad::matmul_nt(x, weight);
  if (lora_a && lora_b) y = ad::add(y, ad::scale(ad::matmul_nt(ad::matmul_nt(x, *lora_a), *lora_b), scale));
  return ad::add_bias(y, bias);
}

namespace {

struct BlockContext {
  ParamBinding& params;
  std::string prefix;
  bool lora = false;
  double lora_scale = 0.0;
};

ad::Var dense(BlockContext& ctx, const std::string& name, ad::Var x) {
  ad::Var w = ctx.params.get(name + ".weight");
  ad::Var b = ctx.params.get(name + ".bias");
  return ad::linear(x, w, b);
}

ad::Var attn_proj(BlockContext& ctx, const std::string& name, ad::Var x) {
  ad::Var w = ctx.params.get(name + ".weight");
  ad::Var b = ctx.params.get(name + ".bias");
  if (!ctx.lora) return ad::linear(x, w, b);
  ad::Var a = ctx.params.get(name + ".lora_a");
  ad::Var bb = ctx.params.get(name + ".lora_b");
  return lora_linear(x, w, b, &a, &bb, ctx.lora_scale);
}

ad::Var norm(BlockContext& ctx, const std::string& name, ad::Var x) {
  return ad::layer_norm(x, ctx.params.get(name + ".gamma"), ctx.params.get(name + ".beta"));
}

// Pre-LN block: x + Attn(LN(x)), then x + MLP(LN(x)). `mask` is added to the
// attention logits (0 or a large negative value).
ad::Var transformer_block(BlockContext& ctx, std::size_t layer, ad::Var x, const Matrix* mask) {
  const std::string b = ctx.prefix + ".blocks." + std::to_string(layer);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  ad::Var h = norm(ctx, b + ".ln1", x);
  ad::Var q = attn_proj(ctx, b + ".attn.q", h);
  ad::Var k = attn_proj(ctx, b + ".attn.k", h);
  ad::Var v = attn_proj(ctx, b + ".attn.v", h);
  ad::Var logits = ad::scale(ad::matmul_nt(q, k), inv_sqrt);
  if (mask) logits = ad::add_const(logits, *mask);
  ad::Var attn = ad::matmul(ad::softmax_rows(logits), v);
  x = ad::add(x, attn_proj(ctx, b + ".attn.o", attn));
  ad::Var h2 = norm(ctx, b + ".ln2", x);
  ad::Var m = dense(ctx, b + ".mlp.fc2", ad::gelu(dense(ctx, b + ".mlp.fc1", h2)));
  return ad::add(x, m);
}

constexpr double kMasked = -1e9;

}  // namespace

Matrix extract_patches(const Matrix& image, const EncoderConfig& c) {
  if (image.rows() != c.image_size || image.cols() != c.image_size)
    throw ShapeError("image is " + image.shape_string() + ", expected " + std::to_string(c.image_size) + "x" +
                     std::to_string(c.image_size));
  const std::size_t ph = c.patch_height(), pw = c.patch_width();
  Matrix patches(c.patch_count(), ph * pw);
  for (std::size_t gr = 0; gr < c.grid_rows; ++gr)
    for (std::size_t gc = 0; gc < c.grid_cols; ++gc) {
      const std::size_t p = gr * c.grid_cols + gc;
      for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t x = 0; x < pw; ++x) patches(p, y * pw + x) = image(gr * ph + y, gc * pw + x);
    }
  return patches;
}

ad::Var vision_backbone(ParamBinding& params, const Matrix& image, const EncoderConfig& c) {
  ad::Tape& tape = params.tape();
  ad::Var patches = tape.constant(extract_patches(image, c));
  BlockContext ctx{params, "vision"};
  ad::Var emb = dense(ctx, "vision.patch", patches);
  const ad::Var parts[] = {params.get("vision.cls"), emb};
  ad::Var x = ad::add(ad::concat_rows(parts), params.get("vision.pos"));
  for (std::size_t l = 0; l < c.vision_layers; ++l) x = transformer_block(ctx, l, x, nullptr);
  return norm(ctx, "vision.ln_final", x);
}

GraphEmbedding project_image_tokens(ParamBinding& params, ad::Var tokens) {
  BlockContext ctx{params, "vision"};
  GraphEmbedding out;
  out.global = ad::mean_rows(dense(ctx, "vision.global_proj", tokens));
  out.local = dense(ctx, "vision.local_proj", tokens);
  out.roles.assign(tokens.rows(), TokenRole::Patch);
  if (!out.roles.empty()) out.roles.front() = TokenRole::Cls;
  return out;
}

GraphEmbedding encode_image_graph(ParamBinding& params, const Matrix& image, const EncoderConfig& c) {
  return project_image_tokens(params, vision_backbone(params, image, c));
}

ad::Var text_backbone(ParamBinding& params, std::span<const int> ids, const EncoderConfig& c,
                      TextEncoderKind kind) {
  if (ids.empty()) throw InputError("encode_text: empty token sequence");
  if (ids.size() > c.max_text_tokens)
    throw ShapeError("encode_text: " + std::to_string(ids.size()) + " tokens exceed max_text_tokens " +
                     std::to_string(c.max_text_tokens));
  const std::size_t n = ids.size();
  std::vector<std::size_t> rows(n), positions(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= c.vocab_size)
      throw InputError("encode_text: token id " + std::to_string(ids[i]) + " outside the vocabulary");
    rows[i] = static_cast<std::size_t>(ids[i]);
    positions[i] = i;
  }
  Matrix mask(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (ids[j] == kPadId || (kind == TextEncoderKind::DecoderOnly && j > i)) mask(i, j) = kMasked;

  BlockContext ctx{params, "text"};
  ctx.lora = c.use_lora && c.lora_rank > 0;
  ctx.lora_scale = ctx.lora ? c.lora_alpha / static_cast<double>(c.lora_rank) : 0.0;
  ad::Var x = ad::add(ad::gather_rows(params.get("text.token_embed"), rows),
                      ad::gather_rows(params.get("text.pos"), positions));
  for (std::size_t l = 0; l < c.text_layers; ++l) x = transformer_block(ctx, l, x, &mask);
  return norm(ctx, "text.ln_final", x);
}

GraphEmbedding encode_text_graph(ParamBinding& params, std::span<const int> ids, const EncoderConfig& c,
                                 TextEncoderKind kind) {
  ad::Var tokens = text_backbone(params, ids, c, kind);
  BlockContext ctx{params, "text"};
  GraphEmbedding out;
  out.roles = text_roles(ids);
  std::vector<std::size_t> real;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] != kPadId) real.push_back(i);
  if (real.empty()) throw InputError("encode_text: sequence holds only padding");
  if (kind == TextEncoderKind::DecoderOnly) {
    const std::size_t last[] = {real.back()};
    out.global = dense(ctx, "text.global_proj", ad::gather_rows(tokens, last));
  } else {
    out.global = ad::mean_rows(ad::gather_rows(dense(ctx, "text.global_proj", tokens), real));
  }
  out.local = dense(ctx, "text.local_proj", tokens);
  return out;
}

GraphEmbedding encode_text_graph(ParamBinding& params, std::span<const int> ids, const EncoderConfig& c) {
  return encode_text_graph(params, ids, c, c.text_kind);
}

EmbeddingSet encode_image(const Matrix& image, const ParamStore& params, const EncoderConfig& c) {
  ad::Tape tape;
  ParamBinding binding(tape, params, false);
  const GraphEmbedding g = encode_image_graph(binding, image, c);
  return {g.global.value(), g.local.value(), g.roles};
}

EmbeddingSet project_image(const Matrix& backbone_tokens, const ParamStore& params) {
  ad::Tape tape;
  ParamBinding binding(tape, params, false);
  const GraphEmbedding g = project_image_tokens(binding, tape.constant(backbone_tokens));
  return {g.global.value(), g.local.value(), g.roles};
}

EmbeddingSet encode_text(std::span<const int> ids, const ParamStore& params, const EncoderConfig& c,
                         TextEncoderKind kind) {
  ad::Tape tape;
  ParamBinding binding(tape, params, false);
  const GraphEmbedding g = encode_text_graph(binding, ids, c, kind);
  return {g.global.value(), g.local.value(), g.roles};
}

// ---- token selection ----------------------------------------------------------------

std::vector<std::size_t> sentence_rows(std::span<const TokenRole> roles, std::size_t sentence_count) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (roles[i] == TokenRole::Sep) rows.push_back(i);
  if (rows.size() != sentence_count)
    throw AlignmentError("found " + std::to_string(rows.size()) + " SEP tokens for " +
                         std::to_string(sentence_count) + " sentences");
  return rows;
}

std::vector<std::size_t> patch_rows(std::span<const TokenRole> roles) {
  std::size_t cls = 0;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == TokenRole::Cls) ++cls;
    if (roles[i] == TokenRole::Patch) rows.push_back(i);
  }
  if (cls != 1) throw AlignmentError("expected exactly one CLS token, found " + std::to_string(cls));
  return rows;
}

namespace {
Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  if (m.rows() < rows.size()) throw AlignmentError("token roles do not match the feature rows");
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw AlignmentError("token roles do not match the feature rows");
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}
}  // namespace

Matrix select_sentence_features(const Matrix& local, std::span<const TokenRole> roles,
                                std::size_t sentence_count) {
  return take_rows(local, sentence_rows(roles, sentence_count));
}

Matrix select_patch_features(const Matrix& local, std::span<const TokenRole> roles) {
  return take_rows(local, patch_rows(roles));
}

// ---- small math ----------------------------------------------------------------------

std::vector<double> lora_forward(std::span<const double> x, const Matrix& W, const Matrix& A, const Matrix& B,
                                 double alpha, std::size_t rank) {
  if (W.cols() != x.size()) throw ShapeError("lora_forward: W is " + W.shape_string() + " for x of length " +
                                             std::to_string(x.size()));
  const Matrix xv = Matrix::row_vector(x);
  Matrix y = kernels::matmul_nt(xv, W);
  if (rank > 0) {
    if (A.rows() != rank || A.cols() != x.size() || B.rows() != W.rows() || B.cols() != rank)
      throw ShapeError("lora_forward: adapter shapes A " + A.shape_string() + ", B " + B.shape_string() +
                       " do not fit W " + W.shape_string() + " at rank " + std::to_string(rank));
    const Matrix low = kernels::matmul_nt(kernels::matmul_nt(xv, A), B);
    const double s = alpha / static_cast<double>(rank);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * low[i];
  }
  return y.values();
}

std::vector<double> l2_normalize(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double n = std::sqrt(s);
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("l2_normalize: degenerate vector with norm " +
                                                          std::to_string(n));
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

}  // namespace mama
