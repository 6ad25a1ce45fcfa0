#include "mama/caption.hpp"

#include <algorithm>
#include <cctype>

#include "mama/errors.hpp"

namespace mama {

namespace {

constexpr std::array<std::string_view, kSegmentCount> kSegmentNames = {
    "PROCEDURE", "PATIENT_META", "IMAGE_META", "COMPOSITION", "FINDINGS", "IMPRESSION", "ASSESSMENT"};

const char kTemplateText[] =
#include "mama/default_template.inc"
    ;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_terminal(char ch) { return ch == '.' || ch == '!' || ch == '?'; }

std::vector<std::string> placeholders_in(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string_view::npos) {
    const std::size_t close = text.find('}', pos);
    if (close == std::string_view::npos) throw TemplateError("unclosed placeholder in '" + std::string(text) + "'");
    out.emplace_back(text.substr(pos + 1, close - pos - 1));
    pos = close + 1;
  }
  return out;
}

std::vector<std::string_view> split_clauses(std::string_view body) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= body.size(); ++i) {
    if (i == body.size() || body[i] == ',') {
      const auto clause = trim(body.substr(start, i - start));
      if (!clause.empty()) out.push_back(clause);
      start = i + 1;
    }
  }
  return out;
}

std::optional<std::string> resolve_fixed(const ImageRecord& r, std::string_view kw) {
  if (kw == "side") return to_string(r.side);
  if (kw == "view") return to_string(r.view);
  if (kw == "density") return to_string(r.density);
  if (kw == "density_desc") return density_description(r.density);
  if (kw == "birads") return to_string(r.birads);
  if (kw == "impression") return birads_impression(r.birads);
  if (kw == "cancer") {
    if (!r.cancer) return std::nullopt;
    return *r.cancer ? std::string("malignant") : std::string("not malignant");
  }
  return std::nullopt;
}

struct BuiltSentence {
  std::string text;
  Segment segment;
};

void finalize(Caption& cap, const std::vector<std::pair<std::size_t, std::optional<Segment>>>& starts) {
  cap.sentence_spans = split_sentences(cap.text);
  cap.sentence_segments.clear();
  for (const auto& span : cap.sentence_spans) {
    std::optional<Segment> seg;
    for (const auto& [start, s] : starts)
      if (start <= span.start) seg = s;
    cap.sentence_segments.push_back(seg);
  }
}

}  // namespace

std::string to_string(Segment s) { return std::string(kSegmentNames[static_cast<std::size_t>(s)]); }

std::optional<Segment> parse_segment(std::string_view s) {
  for (std::size_t i = 0; i < kSegmentNames.size(); ++i)
    if (kSegmentNames[i] == s) return static_cast<Segment>(i);
  return std::nullopt;
}

std::string to_string(CaptionStyle s) {
  switch (s) {
    case CaptionStyle::Structured: return "structured";
    case CaptionStyle::ClipStyle: return "clip";
    case CaptionStyle::Tabular: return "tabular";
  }
  return {};
}

std::optional<CaptionStyle> parse_caption_style(std::string_view s) {
  if (s == "structured") return CaptionStyle::Structured;
  if (s == "clip") return CaptionStyle::ClipStyle;
  if (s == "tabular") return CaptionStyle::Tabular;
  return std::nullopt;
}

std::string_view Caption::sentence(std::size_t i) const {
  const auto& sp = sentence_spans.at(i);
  return std::string_view(text).substr(sp.start, sp.end - sp.start);
}

std::optional<std::size_t> Caption::sentence_of(Segment segment) const {
  for (std::size_t i = 0; i < sentence_segments.size(); ++i)
    if (sentence_segments[i] == segment) return i;
  return std::nullopt;
}

bool is_fixed_field(std::string_view kw) {
  return kw == "side" || kw == "view" || kw == "density" || kw == "density_desc" || kw == "birads" ||
         kw == "impression" || kw == "cancer";
}

bool is_clinical_field(std::string_view kw) {
  return kw == "density" || kw == "density_desc" || kw == "birads" || kw == "impression" ||
         kw == "findings";
}

CaptionTemplate CaptionTemplate::parse(std::string_view text) {
  std::vector<std::vector<std::string>> blocks(1);
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = trim(text.substr(pos, nl - pos));
    if (line.empty()) {
      if (!blocks.back().empty()) blocks.emplace_back();
    } else {
      blocks.back().emplace_back(line);
    }
    pos = nl + 1;
  }
  if (blocks.back().empty()) blocks.pop_back();

  CaptionTemplate t;
  for (const auto& block : blocks) {
    if (block.front() == "[maskable]") {
      for (std::size_t i = 1; i < block.size(); ++i) t.maskable_.push_back(block[i]);
      continue;
    }
    const auto seg = parse_segment(block.front());
    if (!seg) throw TemplateError("unknown template segment '" + block.front() + "'");
    std::string body;
    for (std::size_t i = 1; i < block.size(); ++i) {
      if (!body.empty()) body.push_back(' ');
      body += block[i];
    }
    t.segments_.push_back({*seg, body});
  }

  if (t.segments_.size() != kSegmentCount)
    throw TemplateError("template must define all " + std::to_string(kSegmentCount) + " segments");
  for (std::size_t i = 0; i < kSegmentCount; ++i)
    if (t.segments_[i].segment != static_cast<Segment>(i))
      throw TemplateError("template segment " + std::to_string(i) + " should be " +
                          std::string(kSegmentNames[i]));

  for (const auto& s : t.segments_)
    for (const auto& kw : placeholders_in(s.text))
      if (!is_fixed_field(kw)) t.keyword_vocab_.insert(kw);

  for (const auto& kw : t.maskable_) {
    if (is_clinical_field(kw) || is_fixed_field(kw))
      throw TemplateError("keyword '" + kw + "' cannot be maskable");
    if (!t.keyword_vocab_.contains(kw))
      throw TemplateError("maskable keyword '" + kw + "' is not used by any segment");
  }
  return t;
}

const CaptionTemplate& CaptionTemplate::default_template() {
  static const CaptionTemplate t = parse(kTemplateText);
  return t;
}

bool CaptionTemplate::is_maskable(std::string_view kw) const {
  return std::find(maskable_.begin(), maskable_.end(), kw) != maskable_.end();
}

Caption build_structured_caption(const ImageRecord& record, const CaptionTemplate& tmpl,
                                 double mask_prob, Rng& rng, const CaptionOptions& options) {
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0))
    throw ConfigError("mask_prob must lie in [0, 1]");
  Caption cap;
  cap.style = CaptionStyle::Structured;
  for (const auto& kw : tmpl.maskable())
    if (bernoulli(rng, mask_prob)) cap.masked_keywords.insert(kw);

  std::vector<BuiltSentence> built;
  for (const auto& seg : tmpl.segments()) {
    if (options.omit.contains(seg.segment)) continue;
    for (const auto& span : split_sentences(seg.text)) {
      std::string_view sentence = std::string_view(seg.text).substr(span.start, span.end - span.start);
      std::string terminal;
      while (!sentence.empty() && is_terminal(sentence.back())) {
        terminal.insert(terminal.begin(), sentence.back());
        sentence.remove_suffix(1);
      }
      const auto clauses = split_clauses(sentence);

      std::vector<std::string> kept;
      bool first_dropped = false;
      for (std::size_t ci = 0; ci < clauses.size(); ++ci) {
        std::string out;
        bool keep = true;
        std::size_t cursor = 0;
        const std::string_view clause = clauses[ci];
        while (cursor < clause.size()) {
          const std::size_t open = clause.find('{', cursor);
          if (open == std::string_view::npos) {
            out.append(clause.substr(cursor));
            break;
          }
          out.append(clause.substr(cursor, open - cursor));
          const std::size_t close = clause.find('}', open);
          const std::string kw(clause.substr(open + 1, close - open - 1));
          cursor = close + 1;
          if (is_fixed_field(kw)) {
            const auto v = resolve_fixed(record, kw);
            if (!v) throw TemplateError("cannot resolve placeholder {" + kw + "} for image '" +
                                        record.image_id + "'");
            out += *v;
          } else if (cap.masked_keywords.contains(kw)) {
            keep = false;
          } else if (const std::string* v = record.meta.find(kw)) {
            out += *v;
          } else {
            keep = false;
          }
        }
        if (keep) {
          kept.push_back(std::move(out));
        } else if (ci == 0) {
          first_dropped = true;
        }
      }
      if (kept.empty()) continue;

      std::string text;
      for (std::size_t i = 0; i < kept.size(); ++i) {
        if (i) text += ", ";
        text += kept[i];
      }
      if (first_dropped && !text.empty())
        text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
      text += terminal.empty() ? "." : terminal;
      built.push_back({std::move(text), seg.segment});
    }
  }

  std::vector<std::pair<std::size_t, std::optional<Segment>>> starts;
  for (const auto& s : built) {
    if (!cap.text.empty()) cap.text.push_back(' ');
    starts.emplace_back(cap.text.size(), s.segment);
    cap.text += s.text;
  }
  finalize(cap, starts);
  return cap;
}

Caption build_clip_style_caption(const ImageRecord& record) {
  Caption cap;
  cap.style = CaptionStyle::ClipStyle;
  cap.text = "a mammogram with BI-RADS category " + to_string(record.birads) + " and breast density " +
             to_string(record.density) + ".";
  finalize(cap, {});
  return cap;
}

Caption build_tabular_caption(const ImageRecord& record) {
  std::vector<std::pair<std::string, std::string>> fields = {
      {"side", to_string(record.side)},
      {"view", to_string(record.view)},
      {"density", to_string(record.density)},
      {"birads", to_string(record.birads)},
  };
  if (record.cancer) fields.emplace_back("cancer", *record.cancer ? "yes" : "no");
  for (const auto& kv : record.meta.entries()) fields.push_back(kv);

  Caption cap;
  cap.style = CaptionStyle::Tabular;
  for (const auto& [k, v] : fields) {
    if (!cap.text.empty()) cap.text.push_back('\n');
    cap.text += k + ": " + v + ".";
  }
  finalize(cap, {});
  return cap;
}

std::vector<SentenceSpan> split_sentences(std::string_view text) {
  std::vector<SentenceSpan> spans;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto skip_ws = [&] {
    while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  };
  skip_ws();
  std::size_t start = i;
  while (i < n) {
    if (is_terminal(text[i]) && (i + 1 == n || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      spans.push_back({start, i + 1});
      ++i;
      skip_ws();
      start = i;
      continue;
    }
    ++i;
  }
  if (start < n) {
    std::size_t end = n;
    while (end > start && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
    if (end > start) spans.push_back({start, end});
  }
  return spans;
}

}  // namespace mama
