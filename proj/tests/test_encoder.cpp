#include <doctest.h>

#include <cmath>

#include "mama/encoder.hpp"
#include "mama/errors.hpp"
#include "mama/kernels.hpp"
#include "support.hpp"

using namespace mama;
using testing::max_abs_diff;
using testing::random_matrix;

namespace {

EncoderConfig tiny() {
  EncoderConfig c;
  c.embed_dim = 6;
  c.image_size = 8;
  c.grid_rows = c.grid_cols = 2;
  c.vision_width = c.text_width = 4;
  c.vision_layers = c.text_layers = 1;
  c.vocab_size = 32;
  c.max_text_tokens = 16;
  c.lora_rank = 2;
  c.lora_alpha = 4;
  return c;
}

// x·Wᵀ + b, row by row.
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out(x.rows(), w.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double acc = b[o];
      for (std::size_t k = 0; k < x.cols(); ++k) acc += x(r, k) * w(o, k);
      out(r, o) = acc;
    }
  return out;
}

Matrix text_features(const ParamStore& params, const std::vector<int>& ids, const EncoderConfig& c,
                     TextEncoderKind kind) {
  ad::Tape tape;
  ParamBinding b(tape, params, false);
  return text_backbone(b, ids, c, kind).value();
}

}  // namespace

TEST_CASE("project_image: pooling") {
  const EncoderConfig c = tiny();
  ParamStore p = init_encoder_params(c, 3);
  p.value("vision.global_proj.bias") = Matrix(1, c.embed_dim, 0.0);
  p.value("vision.local_proj.bias") = Matrix(1, c.embed_dim, 0.0);
  const std::size_t tokens = c.patch_count() + 1;

  EmbeddingSet zero = project_image(Matrix(tokens, c.vision_width, 0.0), p);
  for (double v : zero.global.values()) CHECK(v == 0.0);

  Matrix same(tokens, c.vision_width);
  for (std::size_t r = 0; r < tokens; ++r)
    for (std::size_t k = 0; k < c.vision_width; ++k) same(r, k) = 0.1 * (k + 1);
  EmbeddingSet s = project_image(same, p);
  Matrix want = affine(Matrix{{0.1, 0.2, 0.3, 0.4}}, p.value("vision.global_proj.weight"), p.value("vision.global_proj.bias"));
  CHECK(max_abs_diff(s.global, want) < 1e-12);

  Rng rng(4);
  ParamStore q = init_encoder_params(c, 5);
  Matrix feats = random_matrix(tokens, c.vision_width, rng);
  EmbeddingSet r = project_image(feats, q);
  Matrix proj = affine(feats, q.value("vision.global_proj.weight"), q.value("vision.global_proj.bias"));
  Matrix mean(1, c.embed_dim, 0.0);
  for (std::size_t t = 0; t < tokens; ++t)
    for (std::size_t k = 0; k < c.embed_dim; ++k) mean(0, k) += proj(t, k) / tokens;
  CHECK(max_abs_diff(r.global, mean) < 1e-12);
  CHECK(max_abs_diff(r.local, affine(feats, q.value("vision.local_proj.weight"), q.value("vision.local_proj.bias"))) < 1e-12);
  CHECK(r.token_roles.front() == TokenRole::Cls);
  CHECK(r.token_roles.size() == tokens);
}

TEST_CASE("encode_image: shapes") {
  const EncoderConfig c = tiny();
  ParamStore p = init_encoder_params(c, 1);
  Rng rng(2);
  EmbeddingSet e = encode_image(random_matrix(8, 8, rng), p, c);
  CHECK(e.local.rows() == c.patch_count() + 1);
  CHECK(e.global.cols() == c.embed_dim);
  CHECK(select_patch_features(e.local, e.token_roles).rows() == c.patch_count());
  CHECK_THROWS_AS(encode_image(Matrix(6, 8), p, c), ShapeError);
}

TEST_CASE("extract_patches: row-major tiles") {
  EncoderConfig c = tiny();
  Matrix img(8, 8);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t k = 0; k < 8; ++k) img(r, k) = r * 8 + k;
  Matrix p = extract_patches(img, c);
  REQUIRE(p.rows() == 4);
  REQUIRE(p.cols() == 16);
  CHECK(p(1, 0) == 4.0);   // top-right tile starts at column 4
  CHECK(p(2, 0) == 32.0);  // bottom-left tile starts at row 4
  CHECK(p(3, 15) == 63.0);
}

TEST_CASE("encode_text: decoder-only takes the last real token") {
  const EncoderConfig c = tiny();
  ParamStore p = init_encoder_params(c, 7);
  const std::vector<int> ids{kClsId, 9, kSepId, kPadId, kPadId, kPadId, kPadId, kPadId};
  EmbeddingSet e = encode_text(ids, p, c, TextEncoderKind::DecoderOnly);
  Matrix feats = text_features(p, ids, c, TextEncoderKind::DecoderOnly);
  Matrix row2(1, c.text_width);
  for (std::size_t k = 0; k < c.text_width; ++k) row2(0, k) = feats(2, k);
  CHECK(max_abs_diff(e.global, affine(row2, p.value("text.global_proj.weight"), p.value("text.global_proj.bias"))) < 1e-12);
}

TEST_CASE("encode_text: padding invariance") {
  const EncoderConfig c = tiny();
  ParamStore p = init_encoder_params(c, 8);
  const std::vector<int> ids{kClsId, 9, 10, kSepId, 11, kSepId};
  for (auto kind : {TextEncoderKind::DecoderOnly, TextEncoderKind::Bidirectional}) {
    EmbeddingSet a = encode_text(ids, p, c, kind);
    EmbeddingSet b = encode_text(pad_to(ids, 12), p, c, kind);
    CHECK(max_abs_diff(a.global, b.global) < 1e-12);
    auto sa = select_sentence_features(a.local, a.token_roles, 2);
    auto sb = select_sentence_features(b.local, b.token_roles, 2);
    CHECK(max_abs_diff(sa, sb) < 1e-12);
  }
  CHECK_THROWS(encode_text(std::vector<int>(17, 9), p, c, TextEncoderKind::DecoderOnly));
}

TEST_CASE("encode_text: bidirectional mean of identical rows") {
  const EncoderConfig c = tiny();
  ParamStore p = init_encoder_params(c, 9);
  p.value("text.pos") = Matrix(c.max_text_tokens, c.text_width, 0.0);
  const std::vector<int> ids{12, 12, 12, 12};
  EmbeddingSet e = encode_text(ids, p, c, TextEncoderKind::Bidirectional);
  Matrix feats = text_features(p, ids, c, TextEncoderKind::Bidirectional);
  Matrix row0(1, c.text_width);
  for (std::size_t k = 0; k < c.text_width; ++k) row0(0, k) = feats(0, k);
  CHECK(max_abs_diff(e.global, affine(row0, p.value("text.global_proj.weight"), p.value("text.global_proj.bias"))) < 1e-9);
}

TEST_CASE("select_sentence_features / select_patch_features") {
  Rng rng(1);
  std::vector<TokenRole> roles(16, TokenRole::Word);
  roles[0] = TokenRole::Cls;
  roles[4] = roles[9] = roles[13] = TokenRole::Sep;
  Matrix local = random_matrix(16, 3, rng);
  Matrix s = select_sentence_features(local, roles, 3);
  REQUIRE(s.rows() == 3);
  const std::size_t at[] = {4, 9, 13};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 3; ++k) CHECK(s(i, k) == local(at[i], k));
  // permuting non-SEP rows changes nothing
  Matrix perm = local;
  for (std::size_t k = 0; k < 3; ++k) std::swap(perm(1, k), perm(11, k));
  CHECK(select_sentence_features(perm, roles, 3) == s);
  CHECK_THROWS_AS(select_sentence_features(local, roles, 2), AlignmentError);

  std::vector<TokenRole> one{TokenRole::Cls, TokenRole::Word, TokenRole::Sep};
  Matrix l3 = random_matrix(3, 2, rng);
  Matrix s1 = select_sentence_features(l3, one, 1);
  CHECK(s1(0, 0) == l3(2, 0));

  std::vector<TokenRole> img{TokenRole::Cls, TokenRole::Patch, TokenRole::Patch, TokenRole::Patch};
  Matrix li = random_matrix(4, 2, rng);
  Matrix pf = select_patch_features(li, img);
  REQUIRE(pf.rows() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(pf(i, 1) == li(i + 1, 1));
  Matrix lp = li;
  for (std::size_t k = 0; k < 2; ++k) lp(0, k) = 99;  // CLS row is ignored
  CHECK(select_patch_features(lp, img) == pf);
  std::vector<TokenRole> twocls{TokenRole::Cls, TokenRole::Cls, TokenRole::Patch};
  CHECK_THROWS_AS(select_patch_features(random_matrix(3, 2, rng), twocls), AlignmentError);
}

TEST_CASE("lora_forward") {
  Rng rng(6);
  Matrix w = random_matrix(3, 3, rng), a = random_matrix(2, 3, rng), b(3, 2, 0.0);
  const std::vector<double> x{0.3, -1.2, 0.5};
  auto base = lora_forward(x, w, Matrix(0, 3), Matrix(3, 0), 4, 0);
  auto zero_b = lora_forward(x, w, a, b, 4, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    double want = 0;
    for (std::size_t k = 0; k < 3; ++k) want += w(i, k) * x[k];
    CHECK(base[i] == doctest::Approx(want).epsilon(1e-15));
    CHECK(zero_b[i] == base[i]);
  }
  b = random_matrix(3, 2, rng);
  // dense oracle: (W + (alpha/r)·B·A)·x with alpha/r = 2
  Matrix ba(3, 3, 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t r = 0; r < 2; ++r) ba(i, j) += b(i, r) * a(r, j);
  auto got = lora_forward(x, w, a, b, 4, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    double want = 0;
    for (std::size_t k = 0; k < 3; ++k) want += (w(i, k) + 2.0 * ba(i, k)) * x[k];
    CHECK(std::abs(got[i] - want) < 1e-6);
  }
}

TEST_CASE("l2_normalize") {
  auto v = l2_normalize(std::vector<double>{3, 4});
  CHECK(v[0] == doctest::Approx(0.6));
  CHECK(v[1] == doctest::Approx(0.8));
  auto u = l2_normalize(std::vector<double>{0, 1, 0});
  CHECK(u == std::vector<double>{0, 1, 0});
  Rng rng(3);
  std::vector<double> r(8);
  for (auto& x : r) x = normal(rng);
  auto n = l2_normalize(r);
  double s = 0;
  for (double x : n) s += x * x;
  CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-7);
  CHECK_THROWS_AS(l2_normalize(std::vector<double>{0, 0}), NumericError);
}

TEST_CASE("parameters: LoRA freezes the text backbone") {
  EncoderConfig c = tiny();
  ParamStore lora = init_encoder_params(c, 1);
  CHECK_FALSE(lora.at("text.blocks.0.attn.q.weight").trainable);
  CHECK(lora.at("text.blocks.0.attn.q.lora_a").trainable);
  CHECK(lora.at("text.global_proj.weight").trainable);
  for (double v : lora.value("text.blocks.0.attn.q.lora_b").values()) CHECK(v == 0.0);
  c.use_lora = false;
  ParamStore full = init_encoder_params(c, 1);
  CHECK(full.at("text.blocks.0.attn.q.weight").trainable);
  CHECK_FALSE(full.contains("text.blocks.0.attn.q.lora_a"));
}
