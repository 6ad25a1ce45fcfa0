#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "mama/matrix.hpp"
#include "mama/records.hpp"

namespace mama {

// Decoded images keyed by image_id. Relative image paths resolve against
// `base_dir`; images of another size are resampled to `image_size` squared.
class ImageCache {
 public:
  ImageCache(std::filesystem::path base_dir, std::size_t image_size)
      : base_dir_(std::move(base_dir)), image_size_(image_size) {}

  // Thread-safe; returned references stay valid for the cache's lifetime.
  const Matrix& get(const ImageRecord& record);
  void insert(const std::string& image_id, Matrix image);
  // Decodes every record up front (in parallel) so later lookups never hit disk.
  void preload(const std::vector<ImageRecord>& records);

 private:
  Matrix load(const ImageRecord& record) const;

  std::filesystem::path base_dir_;
  std::size_t image_size_;
  std::mutex mu_;
  std::map<std::string, Matrix> images_;
};

struct Dataset {
  std::vector<ImageRecord> records;
  std::filesystem::path base_dir;
};

Dataset load_dataset(const std::filesystem::path& csv_path, const CsvSchema& schema = {});

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace mama
