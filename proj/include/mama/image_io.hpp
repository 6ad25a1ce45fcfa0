#pragma once

#include <filesystem>

#include "mama/matrix.hpp"

namespace mama {

// 8- or 16-bit grayscale PGM (P5) or PNG, scaled to [0, 1]. The format is
// picked from the file signature, not the extension.
Matrix read_image(const std::filesystem::path& path);

// Writes a P5 PGM; values are clamped to [0, 1] and scaled to maxval.
void write_pgm(const std::filesystem::path& path, const Matrix& image, int bits = 8);

// Resizes with bilinear sampling (pixel centres aligned).
Matrix resize_bilinear(const Matrix& image, std::size_t rows, std::size_t cols);

}  // namespace mama
