#include <doctest.h>

#include <map>

#include "mama/caption.hpp"
#include "mama/errors.hpp"
#include "mama/tokenizer.hpp"

using namespace mama;

namespace {

ImageRecord sample_record() {
  ImageRecord r;
  r.image_id = "img";
  r.patient_id = "p";
  r.study_id = "s";
  r.side = Side::Left;
  r.view = View::MLO;
  r.density = Density::B;
  r.birads = Birads::Cat2;
  r.meta.set("procedure", "screening");
  r.meta.set("age", "61");
  r.meta.set("race", "Asian");
  r.meta.set("ethnicity", "Non-Hispanic");
  r.meta.set("manufacturer", "Acme");
  r.meta.set("model", "M-2000");
  r.meta.set("findings", "a spiculated mass");
  return r;
}

const std::vector<std::string> kMaskable = {"age", "race", "ethnicity", "manufacturer", "model"};

}  // namespace

TEST_CASE("structured caption: no masking keeps every keyword") {
  Rng rng(1);
  const ImageRecord r = sample_record();
  Caption c = build_structured_caption(r, CaptionTemplate::default_template(), 0.0, rng);
  CHECK(c.masked_keywords.empty());
  for (const auto& [k, v] : r.meta.entries()) CHECK(c.text.find(v) != std::string::npos);
  CHECK(c.sentence_count() == 7);
  CHECK(c.sentence_of(Segment::Findings).has_value());
  CHECK(c.sentence(*c.sentence_of(Segment::Findings)).find("spiculated") != std::string_view::npos);
}

TEST_CASE("structured caption: full masking drops meta, keeps clinical text") {
  Rng rng(1);
  const ImageRecord r = sample_record();
  Caption c = build_structured_caption(r, CaptionTemplate::default_template(), 1.0, rng);
  CHECK(c.masked_keywords.size() == kMaskable.size());
  for (const auto& k : kMaskable) CHECK(c.text.find(*r.meta.find(k)) == std::string::npos);
  CHECK(c.text.find("density B") != std::string::npos);
  CHECK(c.text.find("BI-RADS category 2") != std::string::npos);
  CHECK(c.text.find("spiculated mass") != std::string::npos);
  CHECK_THROWS_AS(build_structured_caption(r, CaptionTemplate::default_template(), 1.5, rng), ConfigError);
}

TEST_CASE("structured caption: masking rate") {
  Rng rng(2024);
  const ImageRecord r = sample_record();
  std::map<std::string, int> masked;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    Caption c = build_structured_caption(r, CaptionTemplate::default_template(), 0.8, rng);
    for (const auto& k : c.masked_keywords) ++masked[k];
    CHECK(c.text.find("spiculated mass") != std::string::npos);
  }
  for (const auto& k : kMaskable) {
    CAPTURE(k);
    const double rate = double(masked[k]) / n;
    CHECK(rate >= 0.78);
    CHECK(rate <= 0.82);
  }
}

TEST_CASE("clip and tabular styles") {
  ImageRecord r = sample_record();
  Caption c = build_clip_style_caption(r);
  CHECK(c.text == "a mammogram with BI-RADS category 2 and breast density B.");
  CHECK(c.sentence_count() == 1);
  CHECK(build_clip_style_caption(r).text == build_clip_style_caption(sample_record()).text);

  ImageRecord bare = r;
  bare.meta = {};
  Caption t0 = build_tabular_caption(bare);
  CHECK(t0.sentence_count() == 4);  // side, view, density, birads
  CHECK(t0.text.find("side: left.") == 0);
  Caption t = build_tabular_caption(r);
  CHECK(t.sentence_count() == 4 + r.meta.entries().size());
  // schema order: fixed fields first, then meta in column order
  CHECK(t.text.find("view:") < t.text.find("density:"));
  CHECK(t.text.find("density:") < t.text.find("birads:"));
  CHECK(t.text.find("birads:") < t.text.find("procedure:"));
  CHECK(t.text.find("age:") < t.text.find("model:"));
}

TEST_CASE("split_sentences") {
  CHECK(split_sentences("A. B.").size() == 2);
  CHECK(split_sentences("").empty());
  auto s = split_sentences("BI-RADS 2. No mass.");
  REQUIRE(s.size() == 2);
  CHECK(std::string("BI-RADS 2. No mass.").substr(s[0].start, s[0].end - s[0].start) == "BI-RADS 2.");
  auto tail = split_sentences("One. two");
  REQUIRE(tail.size() == 2);
  CHECK(tail[1].end == 8);
  CHECK(split_sentences("v1.5 is fine.").size() == 1);
}

TEST_CASE("template parsing") {
  const std::string ok =
      "PROCEDURE\nExam.\n\nPATIENT_META\nAdult.\n\nIMAGE_META\n{side} {view}.\n\nCOMPOSITION\nDensity {density}.\n\n"
      "FINDINGS\nFindings: {findings}, seen by {reader}.\n\nIMPRESSION\n{impression}.\n\nASSESSMENT\nBI-RADS {birads}.\n\n"
      "[maskable]\nreader\n";
  auto t = CaptionTemplate::parse(ok);
  CHECK(t.maskable() == std::vector<std::string>{"reader"});
  CHECK_THROWS_AS(CaptionTemplate::parse("NOPE\ntext\n"), TemplateError);
  CHECK_THROWS_AS(CaptionTemplate::parse("FINDINGS\nx {findings}.\n"), TemplateError);  // sections missing
  auto swapped = ok;
  swapped.replace(swapped.find("IMPRESSION"), 10, "ASSESSMENX");
  swapped.replace(swapped.find("ASSESSMENT"), 10, "IMPRESSION");
  swapped.replace(swapped.find("ASSESSMENX"), 10, "ASSESSMENT");
  CHECK_THROWS_AS(CaptionTemplate::parse(swapped), TemplateError);  // misordered
  CHECK_THROWS_AS(CaptionTemplate::parse(ok.substr(0, ok.find("[maskable]")) + "[maskable]\nfindings\n"), TemplateError);
  CHECK_THROWS_AS(CaptionTemplate::parse(ok + "unused\n"), TemplateError);

  // absent meta drops the clause
  ImageRecord r = sample_record();
  Rng rng(0);
  Caption c = build_structured_caption(r, t, 0.0, rng);
  CHECK(c.text.find("seen by") == std::string::npos);
  CHECK(c.text.find("Findings: a spiculated mass.") != std::string::npos);
  CHECK(c.sentence_count() == 7);

  // an unresolvable fixed placeholder names the keyword
  auto broken = ok;
  broken.replace(broken.find("{density}"), 9, "{cancer}");
  try {
    build_structured_caption(r, CaptionTemplate::parse(broken), 0.0, rng);
    FAIL("expected a template error");
  } catch (const TemplateError& e) {
    CHECK(std::string(e.what()).find("cancer") != std::string::npos);
  }
}

TEST_CASE("tokenizer") {
  Caption c = build_clip_style_caption(sample_record());
  auto tok = tokenize(c, 64, 512);
  CHECK(tok.ids.front() == kClsId);
  CHECK(tok.ids.back() == kSepId);
  CHECK(tok.sentence_count == 1);
  CHECK(split_words("BI-RADS category 2.") == std::vector<std::string>{"bi-rads", "category", "2"});
  Rng rng(0);
  Caption full = build_structured_caption(sample_record(), CaptionTemplate::default_template(), 0.0, rng);
  auto small = tokenize(full, 20, 512);
  CHECK(small.ids.size() <= 20);
  CHECK(small.sentence_count >= 1);
  CHECK(small.sentence_count < full.sentence_count());
  std::size_t seps = 0;
  for (int id : small.ids) seps += id == kSepId;
  CHECK(seps == small.sentence_count);
}
