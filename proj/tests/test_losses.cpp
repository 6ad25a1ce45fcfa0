#include <doctest.h>

#include <cmath>
#include <vector>

#include "mama/errors.hpp"
#include "mama/losses.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mama;
using testing::random_matrix;
using testing::unit_rows;


TEST_CASE("info_nce_vv: fixed values") {
  Matrix one{{0.6, 0.8}};
  CHECK(info_nce_vv(one, one, 0.5) == doctest::Approx(0.0));
  Matrix same{{1, 0}, {1, 0}};
  for (double tau : {0.1, 0.5, 2.0}) CHECK(info_nce_vv(same, same, tau) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("info_nce_vv: rejects non-finite input") {
  Matrix bad{{NAN, 1.0}};
  CHECK_THROWS_AS(info_nce_vv(bad, bad, 0.5), NumericError);
}

TEST_CASE("clip_vt: fixed values") {
  Matrix one{{1, 0}};
  CHECK(clip_vt(one, one, 0.07) == doctest::Approx(0.0));
  Matrix eye{{1, 0}, {0, 1}};
  const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(want == doctest::Approx(0.3133).epsilon(1e-4));
  CHECK(clip_vt(eye, eye, 1.0) == doctest::Approx(want).epsilon(1e-12));
  // perfect alignment limit
  CHECK(clip_vt(eye, eye, 1e-3) < 1e-2);
}

TEST_CASE("clip_vt: permutation invariant") {
  Rng rng(3);
  Matrix v = unit_rows(random_matrix(5, 6, rng)), t = unit_rows(random_matrix(5, 6, rng));
  Matrix vp(5, 6), tp(5, 6);
  const std::size_t perm[] = {3, 0, 4, 1, 2};
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 6; ++k) {
      vp(i, k) = v(perm[i], k);
      tp(i, k) = t(perm[i], k);
    }
  CHECK(clip_vt(vp, tp, 0.2) == doctest::Approx(clip_vt(v, t, 0.2)).epsilon(1e-12));
}

TEST_CASE("local scores: fixed values and properties") {
  CorrespondenceMatrix c{Matrix{{0.9, 0.1}, {0.2, 0.8}}, {true, true}};
  CHECK(visual_local_score(c) == doctest::Approx(0.85));
  CHECK(text_local_score(c) == doctest::Approx(0.85));

  CorrespondenceMatrix single{Matrix{{0.3, -0.2, 0.7}}, {true}};
  CHECK(visual_local_score(single) == doctest::Approx(0.7));
  CorrespondenceMatrix column{Matrix{{0.3}, {-0.2}, {0.5}}, {true, true, true}};
  CHECK(text_local_score(column) == doctest::Approx(0.5));

  // masked rows are ignored; all masked is an error
  CorrespondenceMatrix masked{Matrix{{0.9, 0.1}, {0.2, 0.8}}, {true, false}};
  CHECK(visual_local_score(masked) == doctest::Approx(0.9));
  CHECK(text_local_score(masked) == doctest::Approx(0.5));
  CorrespondenceMatrix none{Matrix{{0.9}}, {false}};
  CHECK_THROWS_AS(visual_local_score(none), InputError);

  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix m = random_matrix(3, 4, rng);
    CorrespondenceMatrix a{m, {true, true, true}};
    CorrespondenceMatrix at{m.transposed(), {true, true, true, true}};
    CHECK(text_local_score(a) == doctest::Approx(visual_local_score(at)).epsilon(1e-12));
    // a column dominated by column 0 does not change the visual score
    Matrix wider(3, 5);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t k = 0; k < 4; ++k) wider(r, k) = m(r, k);
      wider(r, 4) = m(r, 0) - 0.5;
    }
    CHECK(visual_local_score({wider, {true, true, true}}) == doctest::Approx(visual_local_score(a)).epsilon(1e-12));
  }
}

TEST_CASE("correspondence_matrix: cosine entries") {
  Matrix s{{1, 0, 0}, {0, 2, 0}};
  Matrix p{{3, 0, 0}, {0, 0, 1}};
  auto c = correspondence_matrix(s, p);
  CHECK(c.values(0, 0) == doctest::Approx(1.0));
  CHECK(c.values(1, 1) == doctest::Approx(0.0));
  CHECK_THROWS_AS(correspondence_matrix(Matrix{{0, 0, 0}}, p), NumericError);

  Rng rng(5);
  Matrix s3 = random_matrix(3, 6, rng), p4 = random_matrix(4, 6, rng);
  auto r = correspondence_matrix(s3, p4);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 4; ++k)
      CHECK(r.values(j, k) == doctest::Approx(naive::cosine(s3.row(j), p4.row(k))).epsilon(1e-9));
  // scaling patches leaves the visual score unchanged
  Matrix p4s = p4;
  for (auto& x : p4s.values()) x *= 7.5;
  CHECK(visual_local_score(correspondence_matrix(s3, p4s)) == doctest::Approx(visual_local_score(r)).epsilon(1e-12));
}

TEST_CASE("local_loss: fixed values") {
  Rng rng(1);
  std::vector<Matrix> s1{random_matrix(2, 4, rng)}, p1{random_matrix(3, 4, rng)};
  auto [a, b] = local_loss(s1, p1, 0.1);
  CHECK(a == doctest::Approx(0.0));
  CHECK(b == doctest::Approx(0.0));

  // c^V = identity: one sentence per report matching exactly one image's patches.
  std::vector<Matrix> s{Matrix{{1, 0}}, Matrix{{0, 1}}};
  std::vector<Matrix> p{Matrix{{1, 0}, {-1, 0}}, Matrix{{0, 1}, {0, -1}}};
  auto [cv, ct] = local_score_matrices(s, p);
  CHECK(cv(0, 0) == doctest::Approx(1.0));
  CHECK(cv(0, 1) == doctest::Approx(0.0));
  auto [lv, lt] = local_loss(s, p, 1.0);
  CHECK(lv == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-12));

  // identical features everywhere: uniform softmax
  std::vector<Matrix> si(4, Matrix{{1, 2, 3}}), pi(4, Matrix{{1, 2, 3}, {1, 2, 3}});
  auto [u, w] = local_loss(si, pi, 0.1);
  CHECK(u == doctest::Approx(std::log(4.0)));
  CHECK(w == doctest::Approx(std::log(4.0)));

  std::vector<Matrix> empty{Matrix(0, 3)};
  std::vector<Matrix> pe{Matrix{{1, 2, 3}}};
  CHECK_THROWS(local_loss(empty, pe, 0.1));
}

TEST_CASE("loss oracle suite: 100+ random instances") {
  Rng rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t b = 1 + uniform_index(rng, 8), d = 2 + uniform_index(rng, 15);
    const double tau1 = uniform(rng, 0.1, 1.0), tau2 = uniform(rng, 0.05, 1.0), taul = uniform(rng, 0.05, 1.0);
    BatchEmbeddings e;
    e.v = random_matrix(b, d, rng);
    e.v_pos = random_matrix(b, d, rng);
    e.t = random_matrix(b, d, rng);
    for (std::size_t i = 0; i < b; ++i) {
      e.sentences.push_back(random_matrix(1 + uniform_index(rng, 4), d, rng));
      e.patches.push_back(random_matrix(4, d, rng));
    }
    const double vv = naive::info_nce(e.v, e.v_pos, tau1);
    const double vt1 = naive::clip(e.v, e.t, tau2), vt2 = naive::clip(e.v_pos, e.t, tau2);
    const auto [lv, lt] = naive::local(e.sentences, e.patches, taul);
    worst = std::max(worst, std::abs(info_nce_vv(e.v, e.v_pos, tau1) - vv));
    worst = std::max(worst, std::abs(clip_vt(e.v, e.t, tau2) - vt1));
    const auto got = local_loss(e.sentences, e.patches, taul);
    worst = std::max({worst, std::abs(got.first - lv), std::abs(got.second - lt)});
    for (std::size_t i = 0; i < b; ++i) {
      auto c = correspondence_matrix(e.sentences[i], e.patches[i]);
      worst = std::max(worst, std::abs(visual_local_score(c) - naive::cv(e.sentences[i], e.patches[i])));
      worst = std::max(worst, std::abs(text_local_score(c) - naive::ct(e.sentences[i], e.patches[i])));
    }
    Temperatures temps{tau1, tau2, taul};
    LossOptions opt;
    opt.delta = 5;
    const std::int64_t step = static_cast<std::int64_t>(uniform_index(rng, 10));
    const LossBreakdown bd = total_loss(e, temps, step, opt);
    const double w = step < 5 ? 0.0 : 1.0;
    worst = std::max(worst, std::abs(bd.total - (vv + vt1 + vt2 + w * 0.5 * (lv + lt))));
    CHECK(bd.total >= 0.0);
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("total_loss: schedule and identities") {
  Rng rng(8);
  BatchEmbeddings e;
  e.v = random_matrix(3, 5, rng);
  e.v_pos = e.v;
  e.t = random_matrix(3, 5, rng);
  for (int i = 0; i < 3; ++i) {
    e.sentences.push_back(random_matrix(2, 5, rng));
    e.patches.push_back(random_matrix(4, 5, rng));
  }
  LossOptions opt;  // delta 8000
  const auto before = total_loss(e, {}, 7999, opt);
  const auto after = total_loss(e, {}, 8000, opt);
  CHECK(before.w == 0.0);
  CHECK(after.w == 1.0);
  CHECK(before.total == doctest::Approx(before.l_vv + before.l_vt_primary + before.l_vt_positive));
  CHECK(after.total == doctest::Approx(after.l_vv + after.l_vt_primary + after.l_vt_positive +
                                       0.5 * (after.l_local_v + after.l_local_t)));
  CHECK(before.l_vt_primary == after.l_vt_positive);
  CHECK_THROWS(total_loss(e, {}, -1, opt));
  CHECK(local_weight(7999, 8000, 1.0) == 0.0);
  CHECK(local_weight(8000, 8000, 0.5) == 0.5);
}

TEST_CASE("full 2B negatives differ from the primary-only form") {
  Rng rng(4);
  Matrix v = unit_rows(random_matrix(4, 6, rng)), p = unit_rows(random_matrix(4, 6, rng));
  CHECK(info_nce_vv(v, p, 0.5, true) != doctest::Approx(info_nce_vv(v, p, 0.5, false)));
  Matrix one{{1, 0}};
  // B = 1 with 2B negatives still has one negative (the other view of itself is the positive)
  CHECK(info_nce_vv(one, one, 0.5, true) == doctest::Approx(0.0));
}
