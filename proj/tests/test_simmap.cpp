#include <doctest.h>

#include "mama/csv.hpp"
#include "mama/dataset.hpp"
#include "mama/errors.hpp"
#include "mama/image_io.hpp"
#include "mama/simmap.hpp"
#include "support.hpp"

using namespace mama;

TEST_CASE("sentence_map: reshape") {
  CorrespondenceMatrix c{Matrix{{0.1, 0.2, 0.3, 0.4}, {0.5, 0.5, 0.5, 0.5}}, {true, true}};
  SimilarityMap m = sentence_map(c, 0, 2, 2);
  CHECK(m.grid == Matrix{{0.1, 0.2}, {0.3, 0.4}});
  CHECK(m.normalization == MapNormalization::Raw);
  CHECK(sentence_map(c, 1, 2, 2).grid == Matrix{{0.5, 0.5}, {0.5, 0.5}});
  CHECK_THROWS_AS(sentence_map(c, 2, 2, 2), InputError);
  CHECK_THROWS_AS(sentence_map(c, 0, 3, 2), ShapeError);
  CorrespondenceMatrix masked{c.values, {true, false}};
  CHECK_THROWS_AS(sentence_map(masked, 1, 2, 2), InputError);

  Rng rng(2);
  for (int t = 0; t < 30; ++t) {
    Matrix v = testing::random_matrix(3, 12, rng);
    CorrespondenceMatrix r{v, {true, true, true}};
    const std::size_t s = uniform_index(rng, 3);
    std::size_t best = 0;
    for (std::size_t k = 1; k < 12; ++k)
      if (v(s, k) > v(s, best)) best = k;
    CHECK(argmax_cell(sentence_map(r, s, 3, 4).grid) == best);
  }
}

TEST_CASE("normalize_unit") {
  SimilarityMap m;
  m.grid = Matrix{{-0.2, 0.4}, {0.1, 0.6}};
  SimilarityMap n = normalize_unit(m);
  CHECK(n.grid(0, 0) == 0.0);
  CHECK(n.grid(1, 1) == 1.0);
  CHECK(n.grid(1, 0) == doctest::Approx(0.375));
  CHECK(n.normalization == MapNormalization::UnitInterval);
  CHECK(argmax_cell(n.grid) == argmax_cell(m.grid));
  SimilarityMap k;
  k.grid = Matrix(2, 3, 0.7);
  const SimilarityMap flat = normalize_unit(k);
  for (double v : flat.grid.values()) CHECK(v == 0.5);

  // affine maps keep the argmax
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    SimilarityMap r;
    r.grid = testing::random_matrix(4, 4, rng);
    SimilarityMap s = r;
    for (double& v : s.grid.values()) v = 3.0 * v - 1.0;
    CHECK(argmax_cell(normalize_unit(s).grid) == argmax_cell(r.grid));
  }
}

TEST_CASE("export_map") {
  testing::TempDir tmp;
  SimilarityMap m;
  m.grid = Matrix{{0.0, 0.25}, {0.5, 1.0}};
  export_map(m, tmp / "m.csv", MapFormat::Csv);
  auto rows = csv::parse(read_text_file(tmp / "m.csv"));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == csv::Row{"0", "0.25"});
  CHECK(rows[1] == csv::Row{"0.5", "1"});

  CHECK_THROWS(export_map(m, tmp / "m.pgm", MapFormat::Pgm));  // RAW maps cannot become PGM
  m.normalization = MapNormalization::UnitInterval;
  export_map(m, tmp / "m.pgm", MapFormat::Pgm);
  const std::string raw = read_text_file(tmp / "m.pgm");
  CHECK(static_cast<unsigned char>(raw.back()) == 255);
  Matrix back = read_image(tmp / "m.pgm");
  CHECK(testing::max_abs_diff(back, m.grid) <= 1.0 / 255);

  Rng rng(1);
  SimilarityMap r;
  r.grid = testing::random_matrix(5, 5, rng);
  r = normalize_unit(r);
  export_map(r, tmp / "r.pgm", MapFormat::Pgm);
  CHECK(testing::max_abs_diff(read_image(tmp / "r.pgm"), r.grid) <= 1.0 / 255);
  CHECK_THROWS_AS(export_map(r, tmp / "no" / "such" / "dir" / "x.csv", MapFormat::Csv), IoError);
  CHECK(parse_map_format("pgm") == MapFormat::Pgm);
  CHECK_THROWS(parse_map_format("png"));
}
