#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mama/autograd.hpp"
#include "mama/matrix.hpp"
#include "mama/tokenizer.hpp"

namespace mama {

enum class TextEncoderKind { Bidirectional, DecoderOnly };

std::string to_string(TextEncoderKind k);
TextEncoderKind parse_text_encoder_kind(std::string_view s);

// Shapes of the desk-scale encoders. Both backbones are pre-LN single-head
// transformer stacks; every projection head (g_V, h_V, g_T, h_T) is one
// linear layer.
struct EncoderConfig {
  std::size_t embed_dim = 64;
  std::size_t image_size = 32;  // square input, pixels
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;
  std::size_t vision_width = 32;
  std::size_t vision_layers = 2;
  std::size_t text_width = 32;
  std::size_t text_layers = 2;
  std::size_t mlp_ratio = 2;
  std::size_t vocab_size = 2048;
  std::size_t max_text_tokens = 128;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;
  // With LoRA the text backbone is frozen and only adapters + heads train.
  bool use_lora = true;
  TextEncoderKind text_kind = TextEncoderKind::DecoderOnly;

  std::size_t patch_count() const { return grid_rows * grid_cols; }
  std::size_t patch_height() const { return image_size / grid_rows; }
  std::size_t patch_width() const { return image_size / grid_cols; }
  // Throws ConfigError on inconsistent shapes.
  void validate() const;
};

struct Parameter {
  Matrix value;
  bool trainable = true;
  bool decay = false;  // AdamW weight decay applies
};

// Named parameters, iterated in name order.
class ParamStore {
 public:
  void add(const std::string& name, Matrix value, bool trainable, bool decay);
  bool contains(const std::string& name) const { return params_.contains(name); }
  const Parameter& at(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Matrix& value(const std::string& name) const { return at(name).value; }
  Matrix& value(const std::string& name) { return at(name).value; }
  std::vector<std::string> names() const;
  const std::map<std::string, Parameter>& all() const { return params_; }
  std::map<std::string, Parameter>& all() { return params_; }
  std::size_t trainable_count() const;

  bool operator==(const ParamStore& other) const;

 private:
  std::map<std::string, Parameter> params_;
};

bool operator==(const Parameter& a, const Parameter& b);

// Random initialization; LoRA B matrices start at zero so the adapted encoder
// equals its base at step 0.
ParamStore init_encoder_params(const EncoderConfig& config, std::uint64_t seed);

// Rounds every value to float precision (the checkpoint storage precision).
void round_to_float(ParamStore& params);

struct EmbeddingSet {
  Matrix global;  // 1×d
  Matrix local;   // tokens×d
  std::vector<TokenRole> token_roles;
};

// Binds ParamStore entries onto a tape as leaves (aliasing, no copy).
class ParamBinding {
 public:
  ParamBinding(ad::Tape& tape, const ParamStore& params, bool with_grad)
      : tape_(tape), params_(params), with_grad_(with_grad) {}
  ad::Var get(const std::string& name);
  ad::Tape& tape() { return tape_; }
  // Adds gradients of every bound trainable parameter into `out`.
  void collect_gradients(std::map<std::string, Matrix>& out) const;

 private:
  ad::Tape& tape_;
  const ParamStore& params_;
  bool with_grad_;
  std::map<std::string, ad::Var> bound_;
};

struct GraphEmbedding {
  ad::Var global;
  ad::Var local;
  std::vector<TokenRole> roles;
};

// Splits an image into grid_rows×grid_cols patches, row-major, each flattened row-major.
Matrix extract_patches(const Matrix& image, const EncoderConfig& config);

// Vision backbone f_V: (P+1)×vision_width token features, CLS first.
ad::Var vision_backbone(ParamBinding& params, const Matrix& image, const EncoderConfig& config);
// g_V with average pooling over all tokens, and h_V without pooling.
GraphEmbedding project_image_tokens(ParamBinding& params, ad::Var tokens);
GraphEmbedding encode_image_graph(ParamBinding& params, const Matrix& image, const EncoderConfig& config);

ad::Var text_backbone(ParamBinding& params, std::span<const int> ids, const EncoderConfig& config,
                      TextEncoderKind kind);
GraphEmbedding encode_text_graph(ParamBinding& params, std::span<const int> ids,
                                 const EncoderConfig& config, TextEncoderKind kind);
GraphEmbedding encode_text_graph(ParamBinding& params, std::span<const int> ids,
                                 const EncoderConfig& config);

EmbeddingSet encode_image(const Matrix& image, const ParamStore& params, const EncoderConfig& config);
// Projects given backbone features (CLS + P patches) with g_V / h_V.
EmbeddingSet project_image(const Matrix& backbone_tokens, const ParamStore& params);
EmbeddingSet encode_text(std::span<const int> ids, const ParamStore& params, const EncoderConfig& config,
                         TextEncoderKind kind);

std::vector<std::size_t> sentence_rows(std::span<const TokenRole> roles, std::size_t sentence_count);
std::vector<std::size_t> patch_rows(std::span<const TokenRole> roles);

// SEP rows in order; AlignmentError unless exactly `sentence_count` SEPs exist.
Matrix select_sentence_features(const Matrix& local, std::span<const TokenRole> roles,
                                std::size_t sentence_count);
// PATCH rows in grid order; AlignmentError unless exactly one CLS exists.
Matrix select_patch_features(const Matrix& local, std::span<const TokenRole> roles);

// (W + (α/r)·B·A)·x for r > 0, W·x for r == 0. x has k entries, W is d×k,
// A is r×k and B is d×r.
std::vector<double> lora_forward(std::span<const double> x, const Matrix& W, const Matrix& A,
                                 const Matrix& B, double alpha, std::size_t rank);

// x·Wᵀ + b, plus (α/r)·x·Aᵀ·Bᵀ when adapters are given.
ad::Var lora_linear(ad::Var x, ad::Var weight, ad::Var bias, const ad::Var* lora_a,
                    const ad::Var* lora_b, double scale);

// Throws NumericError on a zero or non-finite vector.
std::vector<double> l2_normalize(std::span<const double> v);

}  // namespace mama
