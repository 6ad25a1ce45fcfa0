#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mama {

enum class Side { Left, Right };
enum class View { CC, MLO };
enum class Density { A, B, C, D };
enum class Birads { Cat0, Cat1, Cat2, Cat3, Cat4, Cat5, Cat6 };

inline constexpr int kDensityClasses = 4;
inline constexpr int kBiradsClasses = 7;

std::string to_string(Side s);       // "left" / "right"
std::string to_string(View v);       // "CC" / "MLO"
std::string to_string(Density d);    // "A".."D"
std::string to_string(Birads b);     // "0".."6"
std::string density_description(Density d);
std::string birads_impression(Birads b);

std::optional<Side> parse_side(std::string_view s);
std::optional<View> parse_view(std::string_view s);
std::optional<Density> parse_density(std::string_view s);  // A-D or 1-4
std::optional<Birads> parse_birads(std::string_view s);    // 0-6

// Extra CSV columns in their original column order.
class MetaMap {
 public:
  void set(std::string key, std::string value);
  const std::string* find(std::string_view key) const;
  bool contains(std::string_view key) const { return find(key) != nullptr; }
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

struct ImageRecord {
  std::string image_id;
  std::string patient_id;
  std::string study_id;
  Side side = Side::Left;
  View view = View::CC;
  MetaMap meta;
  Density density = Density::A;
  Birads birads = Birads::Cat1;
  std::optional<bool> cancer;
  std::string image_path;
};

struct Study {
  std::string study_id;
  std::string patient_id;
  std::vector<ImageRecord> images;
};

struct SplitSpec {
  double train_frac = 0.7;
  double val_frac = 0.1;
  double test_frac = 0.2;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  std::vector<Study> train;
  std::vector<Study> val;
  std::vector<Study> test;
};

// Maps logical field names to CSV column names. Logical fields:
// image_id, patient_id, study_id, side, view, density, birads (required) and
// cancer, image_path (optional). Unmapped logical fields default to their own
// name. Every other column becomes a meta keyword.
struct CsvSchema {
  std::map<std::string, std::string> columns;
  std::string column_for(const std::string& logical) const;
};

// Throws SchemaError for a missing required column and RowError (1-based data
// row) for unparseable values or a duplicate image_id.
std::vector<ImageRecord> parse_records(std::string_view csv_text, const CsvSchema& schema = {});

// Writes records back in the canonical column layout, meta columns appended
// in first-seen order.
std::string write_records(const std::vector<ImageRecord>& records);

// Groups by (patient_id, study_id); studies ordered by that key, images within
// a study by (side, view, image_id).
std::vector<Study> group_studies(const std::vector<ImageRecord>& records);

// Patient-disjoint split. Patients are shuffled by seed and cut at
// largest-remainder targets. Throws ConfigError for invalid fractions and
// InputError when there are no patients.
DatasetSplit split_patients(const std::vector<Study>& studies, const SplitSpec& spec);

// round-half-up(fraction·N) studies (at least one) drawn without replacement,
// returned in input order. fraction == 1 returns the input unchanged.
std::vector<Study> subsample_fraction(const std::vector<Study>& studies, double fraction,
                                      std::uint64_t seed);

std::size_t subsample_count(std::size_t n, double fraction);

std::vector<ImageRecord> flatten(const std::vector<Study>& studies);

}  // namespace mama
