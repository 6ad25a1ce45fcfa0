#include "mama/dataset.hpp"

#include <fstream>
#include <sstream>

#include "mama/errors.hpp"
#include "mama/image_io.hpp"

namespace mama {

Matrix ImageCache::load(const ImageRecord& r) const {
  if (r.image_path.empty()) throw InputError("record '" + r.image_id + "' has no image_path");
  std::filesystem::path p(r.image_path);
  if (p.is_relative()) p = base_dir_ / p;
  Matrix img = read_image(p);
  if (img.rows() != image_size_ || img.cols() != image_size_) img = resize_bilinear(img, image_size_, image_size_);
  return img;
}

const Matrix& ImageCache::get(const ImageRecord& r) {
  {
    std::lock_guard lock(mu_);
    const auto it = images_.find(r.image_id);
    if (it != images_.end()) return it->second;
  }
  Matrix img = load(r);
  std::lock_guard lock(mu_);
  return images_.try_emplace(r.image_id, std::move(img)).first->second;
}

void ImageCache::insert(const std::string& image_id, Matrix image) {
  std::lock_guard lock(mu_);
  images_.insert_or_assign(image_id, std::move(image));
}

void ImageCache::preload(const std::vector<ImageRecord>& records) {
  std::vector<std::exception_ptr> errors(records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      get(records[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& csv_path, const CsvSchema& schema) {
  Dataset d;
  d.records = parse_records(read_text_file(csv_path), schema);
  d.base_dir = csv_path.parent_path();
  return d;
}

}  // namespace mama
