#include "mama/simmap.hpp"

#include <algorithm>
#include <cmath>

#include "mama/dataset.hpp"
#include "mama/errors.hpp"
#include "mama/image_io.hpp"
#include "mama/trainer.hpp"

namespace mama {

MapFormat parse_map_format(std::string_view s) {
  if (s == "csv") return MapFormat::Csv;
  if (s == "pgm") return MapFormat::Pgm;
  throw ConfigError("unknown map format '" + std::string(s) + "'");
}

SimilarityMap sentence_map(const CorrespondenceMatrix& c, std::size_t idx, std::size_t rows, std::size_t cols) {
  if (idx >= c.values.rows())
    throw InputError("sentence index " + std::to_string(idx) + " out of range (" + std::to_string(c.values.rows()) +
                     " sentences)");
  if (idx < c.sentence_mask.size() && !c.sentence_mask[idx])
    throw InputError("sentence " + std::to_string(idx) + " is masked");
  if (rows * cols != c.values.cols())
    throw ShapeError("patch grid " + std::to_string(rows) + "x" + std::to_string(cols) + " does not hold " +
                     std::to_string(c.values.cols()) + " patches");
  SimilarityMap m;
  m.sentence_index = idx;
  m.grid = Matrix(rows, cols);
  for (std::size_t k = 0; k < c.values.cols(); ++k) m.grid[k] = c.values(idx, k);
  return m;
}

SimilarityMap normalize_unit(const SimilarityMap& map) {
  SimilarityMap out = map;
  out.normalization = MapNormalization::UnitInterval;
  if (map.grid.empty()) return out;
  const auto [lo, hi] = std::minmax_element(map.grid.values().begin(), map.grid.values().end());
  const double min = *lo, max = *hi;
  for (double& v : out.grid.values()) v = max > min ? (v - min) / (max - min) : 0.5;
  return out;
}

void export_map(const SimilarityMap& map, const std::filesystem::path& path, MapFormat format) {
  if (format == MapFormat::Pgm) {
    if (map.normalization != MapNormalization::UnitInterval)
      throw InputError("PGM export needs a map normalized to [0, 1]");
    write_pgm(path, map.grid, 8);
    return;
  }
  std::string out;
  for (std::size_t r = 0; r < map.grid.rows(); ++r) {
    for (std::size_t c = 0; c < map.grid.cols(); ++c) {
      if (c) out.push_back(',');
      out += format_real(map.grid(r, c));
    }
    out.push_back('\n');
  }
  write_text_file(path, out);
}

std::size_t argmax_cell(const Matrix& grid) {
  return static_cast<std::size_t>(std::max_element(grid.values().begin(), grid.values().end()) -
                                  grid.values().begin());
}

ImageTextCorrespondence image_text_correspondence(const ParamStore& params, const EncoderConfig& encoder,
                                                  const Matrix& image, const Caption& caption) {
  const EmbeddingSet img = encode_image(image, params, encoder);
  const auto tok = tokenize(caption, encoder.max_text_tokens, encoder.vocab_size);
  const EmbeddingSet txt = encode_text(tok.ids, params, encoder, encoder.text_kind);
  ImageTextCorrespondence out;
  out.matrix = correspondence_matrix(select_sentence_features(txt.local, txt.token_roles, tok.sentence_count),
                                     select_patch_features(img.local, img.token_roles));
  for (std::size_t s = 0; s < tok.sentence_count; ++s) out.sentences.emplace_back(caption.sentence(s));
  return out;
}

}  // namespace mama
