#pragma once

#include <filesystem>
#include <string>

#include "mama/caption.hpp"
#include "mama/encoder.hpp"
#include "mama/losses.hpp"

namespace mama {

enum class MapNormalization { Raw, UnitInterval };
enum class MapFormat { Csv, Pgm };
MapFormat parse_map_format(std::string_view s);

struct SimilarityMap {
  Matrix grid;
  std::size_t sentence_index = 0;
  std::string sentence_text;
  MapNormalization normalization = MapNormalization::Raw;
};

// Row `sentence_index` reshaped row-major onto the patch grid.
SimilarityMap sentence_map(const CorrespondenceMatrix& c, std::size_t sentence_index, std::size_t grid_rows,
                           std::size_t grid_cols);
// (x - min) / (max - min); a constant map becomes all 0.5.
SimilarityMap normalize_unit(const SimilarityMap& map);
// CSV: one line per grid row. PGM: 8-bit, round(255·x); needs a unit-interval map.
void export_map(const SimilarityMap& map, const std::filesystem::path& path, MapFormat format);

// Row-major index of the largest cell (first one on ties).
std::size_t argmax_cell(const Matrix& grid);

struct ImageTextCorrespondence {
  CorrespondenceMatrix matrix;  // sentences that fit the token budget × patches
  std::vector<std::string> sentences;
};

ImageTextCorrespondence image_text_correspondence(const ParamStore& params, const EncoderConfig& encoder,
                                                  const Matrix& image, const Caption& caption);

}  // namespace mama
