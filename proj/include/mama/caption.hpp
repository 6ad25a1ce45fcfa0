#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mama/random.hpp"
#include "mama/records.hpp"

namespace mama {

// The seven report sections, in report order.
enum class Segment { Procedure, PatientMeta, ImageMeta, Composition, Findings, Impression, Assessment };
inline constexpr std::size_t kSegmentCount = 7;

std::string to_string(Segment s);  // "PROCEDURE", "PATIENT_META", ...
std::optional<Segment> parse_segment(std::string_view s);

enum class CaptionStyle { Structured, ClipStyle, Tabular };
std::string to_string(CaptionStyle s);                       // "structured" / "clip" / "tabular"
std::optional<CaptionStyle> parse_caption_style(std::string_view s);

struct SentenceSpan {
  std::size_t start = 0;  // inclusive character offset
  std::size_t end = 0;    // exclusive, includes the terminal punctuation
  bool operator==(const SentenceSpan&) const = default;
};

struct Caption {
  std::string text;
  std::vector<SentenceSpan> sentence_spans;
  // Report section each sentence came from; empty optional for non-structured styles.
  std::vector<std::optional<Segment>> sentence_segments;
  std::set<std::string> masked_keywords;
  CaptionStyle style = CaptionStyle::Structured;

  std::size_t sentence_count() const { return sentence_spans.size(); }
  std::string_view sentence(std::size_t i) const;
  // Index of the first sentence from `segment`, if any survived masking.
  std::optional<std::size_t> sentence_of(Segment segment) const;
};

// Placeholders resolved from ImageRecord's fixed fields rather than its meta map.
// side, view, density, density_desc, birads, impression, cancer
bool is_fixed_field(std::string_view keyword);
// Clinical fields are never maskable: density, density_desc, birads, impression, findings.
bool is_clinical_field(std::string_view keyword);

// Report template. Text format: blocks separated by blank lines; the first
// line of a block names the segment, the remaining lines are its text with
// {keyword} placeholders. A trailing `[maskable]` block lists maskable meta
// keywords, one per line.
class CaptionTemplate {
 public:
  struct SegmentText {
    Segment segment;
    std::string text;
  };

  // Throws TemplateError for unknown/misordered segments, maskable clinical
  // fields, or maskable keywords that no segment uses.
  static CaptionTemplate parse(std::string_view text);
  static const CaptionTemplate& default_template();

  const std::vector<SegmentText>& segments() const { return segments_; }
  // Every non-fixed placeholder used by the template.
  const std::set<std::string>& keyword_vocab() const { return keyword_vocab_; }
  // Maskable keywords in footer order.
  const std::vector<std::string>& maskable() const { return maskable_; }
  bool is_maskable(std::string_view keyword) const;

 private:
  std::vector<SegmentText> segments_;
  std::set<std::string> keyword_vocab_;
  std::vector<std::string> maskable_;
};

struct CaptionOptions {
  // Segments left out entirely (used for zero-shot prompts).
  std::set<Segment> omit;
};

// Fills the template from `record`. Each maskable keyword is masked
// independently with probability mask_prob (one Bernoulli draw per keyword in
// footer order); masking drops the comma-delimited clause holding the
// keyword. Clauses whose meta keyword is absent from the record are dropped
// too. Throws TemplateError when a fixed placeholder cannot be resolved.
Caption build_structured_caption(const ImageRecord& record, const CaptionTemplate& tmpl,
                                 double mask_prob, Rng& rng, const CaptionOptions& options = {});

// "a mammogram with BI-RADS category {k} and breast density {c}."
Caption build_clip_style_caption(const ImageRecord& record);

// One "key: value." line per populated field: side, view, density, birads,
// cancer (if present), then meta entries in column order.
Caption build_tabular_caption(const ImageRecord& record);

// Splits at '.', '!' or '?' followed by whitespace or end of text. Spans
// exclude surrounding whitespace; trailing unterminated text forms a final span.
std::vector<SentenceSpan> split_sentences(std::string_view text);

}  // namespace mama
