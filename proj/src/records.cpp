#include "mama/records.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "mama/csv.hpp"
#include "mama/errors.hpp"
#include "mama/random.hpp"

namespace mama {

std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng deserialize_rng(const std::string& text) {
  Rng rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw VersionError("corrupt rng state");
  return rng;
}

namespace {

std::string upper(std::string_view s) {
  std::string out;
  for (char ch : s)
    if (!std::isspace(static_cast<unsigned char>(ch)))
      out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  return out;
}

}  // namespace

std::string to_string(Side s) { return s == Side::Left ? "left" : "right"; }
std::string to_string(View v) { return v == View::CC ? "CC" : "MLO"; }
std::string to_string(Density d) { return std::string(1, static_cast<char>('A' + static_cast<int>(d))); }
std::string to_string(Birads b) { return std::to_string(static_cast<int>(b)); }

std::string density_description(Density d) {
  switch (d) {
    case Density::A: return "the breasts are almost entirely fatty";
    case Density::B: return "there are scattered areas of fibroglandular density";
    case Density::C: return "the breasts are heterogeneously dense";
    case Density::D: return "the breasts are extremely dense";
  }
  return {};
}

std::string birads_impression(Birads b) {
  switch (b) {
    case Birads::Cat0: return "additional imaging evaluation is needed";
    case Birads::Cat1: return "negative";
    case Birads::Cat2: return "benign findings";
    case Birads::Cat3: return "probably benign findings";
    case Birads::Cat4: return "suspicious abnormality";
    case Birads::Cat5: return "highly suggestive of malignancy";
    case Birads::Cat6: return "known biopsy-proven malignancy";
  }
  return {};
}

std::optional<Side> parse_side(std::string_view s) {
  const std::string u = upper(s);
  if (u == "L" || u == "LEFT") return Side::Left;
  if (u == "R" || u == "RIGHT") return Side::Right;
  return std::nullopt;
}

std::optional<View> parse_view(std::string_view s) {
  const std::string u = upper(s);
  if (u == "CC") return View::CC;
  if (u == "MLO") return View::MLO;
  return std::nullopt;
}

std::optional<Density> parse_density(std::string_view s) {
  const std::string u = upper(s);
  if (u.size() != 1) return std::nullopt;
  if (u[0] >= 'A' && u[0] <= 'D') return static_cast<Density>(u[0] - 'A');
  if (u[0] >= '1' && u[0] <= '4') return static_cast<Density>(u[0] - '1');
  return std::nullopt;
}

std::optional<Birads> parse_birads(std::string_view s) {
  const std::string u = upper(s);
  if (u.size() != 1 || u[0] < '0' || u[0] > '6') return std::nullopt;
  return static_cast<Birads>(u[0] - '0');
}

void MetaMap::set(std::string key, std::string value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::move(key), std::move(value));
}

const std::string* MetaMap::find(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return &v;
  return nullptr;
}

std::string CsvSchema::column_for(const std::string& logical) const {
  const auto it = columns.find(logical);
  return it == columns.end() ? logical : it->second;
}

namespace {

const std::vector<std::string> kRequired = {"image_id", "patient_id", "study_id", "side",
                                            "view",     "density",    "birads"};
const std::vector<std::string> kOptional = {"cancer", "image_path"};

std::optional<bool> parse_bool(std::string_view s) {
  const std::string u = upper(s);
  if (u == "1" || u == "TRUE" || u == "YES") return true;
  if (u == "0" || u == "FALSE" || u == "NO") return false;
  return std::nullopt;
}

}  // namespace

std::vector<ImageRecord> parse_records(std::string_view csv_text, const CsvSchema& schema) {
  const auto rows = csv::parse(csv_text);
  if (rows.empty()) throw SchemaError("csv has no header row");
  const csv::Row& header = rows.front();

  std::map<std::string, std::size_t> column_index;
  for (std::size_t i = 0; i < header.size(); ++i) column_index.emplace(header[i], i);

  std::map<std::string, std::size_t> logical_index;
  std::set<std::size_t> claimed;
  for (const auto& field : kRequired) {
    const std::string col = schema.column_for(field);
    const auto it = column_index.find(col);
    if (it == column_index.end()) throw SchemaError("missing required column '" + col + "'");
    logical_index[field] = it->second;
    claimed.insert(it->second);
  }
  for (const auto& field : kOptional) {
    const auto it = column_index.find(schema.column_for(field));
    if (it == column_index.end()) continue;
    logical_index[field] = it->second;
    claimed.insert(it->second);
  }

  std::vector<ImageRecord> records;
  std::set<std::string> seen_ids;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const csv::Row& row = rows[r];
    if (row.size() != header.size())
      throw RowError(r, "expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(row.size()));
    auto field = [&](const std::string& name) -> const std::string& {
      return row[logical_index.at(name)];
    };

    ImageRecord rec;
    rec.image_id = field("image_id");
    rec.patient_id = field("patient_id");
    rec.study_id = field("study_id");
    if (rec.image_id.empty()) throw RowError(r, "empty image_id");
    if (!seen_ids.insert(rec.image_id).second)
      throw RowError(r, "duplicate image_id '" + rec.image_id + "'");

    const auto side = parse_side(field("side"));
    if (!side) throw RowError(r, "invalid side '" + field("side") + "'");
    const auto view = parse_view(field("view"));
    if (!view) throw RowError(r, "invalid view '" + field("view") + "'");
    const auto density = parse_density(field("density"));
    if (!density) throw RowError(r, "invalid density '" + field("density") + "'");
    const auto birads = parse_birads(field("birads"));
    if (!birads) throw RowError(r, "invalid birads '" + field("birads") + "'");
    rec.side = *side;
    rec.view = *view;
    rec.density = *density;
    rec.birads = *birads;

    if (logical_index.contains("cancer") && !field("cancer").empty()) {
      rec.cancer = parse_bool(field("cancer"));
      if (!rec.cancer) throw RowError(r, "invalid cancer flag '" + field("cancer") + "'");
    }
    if (logical_index.contains("image_path")) rec.image_path = field("image_path");

    for (std::size_t c = 0; c < header.size(); ++c) {
      if (claimed.contains(c) || row[c].empty()) continue;
      rec.meta.set(header[c], row[c]);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::string write_records(const std::vector<ImageRecord>& records) {
  std::vector<std::string> meta_cols;
  for (const auto& rec : records)
    for (const auto& [k, v] : rec.meta.entries())
      if (std::find(meta_cols.begin(), meta_cols.end(), k) == meta_cols.end()) meta_cols.push_back(k);

  csv::Row header = {"image_id", "patient_id", "study_id", "side",       "view",
                     "density",  "birads",     "cancer",   "image_path"};
  header.insert(header.end(), meta_cols.begin(), meta_cols.end());
  std::string out = csv::join(header) + "\n";
  for (const auto& rec : records) {
    csv::Row row = {rec.image_id,
                    rec.patient_id,
                    rec.study_id,
                    rec.side == Side::Left ? "L" : "R",
                    to_string(rec.view),
                    to_string(rec.density),
                    to_string(rec.birads),
                    rec.cancer ? (*rec.cancer ? "1" : "0") : "",
                    rec.image_path};
    for (const auto& col : meta_cols) {
      const std::string* v = rec.meta.find(col);
      row.push_back(v ? *v : "");
    }
    out += csv::join(row) + "\n";
  }
  return out;
}

std::vector<Study> group_studies(const std::vector<ImageRecord>& records) {
  std::map<std::pair<std::string, std::string>, Study> groups;
  for (const auto& rec : records) {
    Study& s = groups[{rec.patient_id, rec.study_id}];
    s.patient_id = rec.patient_id;
    s.study_id = rec.study_id;
    s.images.push_back(rec);
  }
  std::vector<Study> studies;
  studies.reserve(groups.size());
  for (auto& [key, study] : groups) {
    std::sort(study.images.begin(), study.images.end(), [](const ImageRecord& a, const ImageRecord& b) {
      return std::tie(a.side, a.view, a.image_id) < std::tie(b.side, b.view, b.image_id);
    });
    studies.push_back(std::move(study));
  }
  return studies;
}

DatasetSplit split_patients(const std::vector<Study>& studies, const SplitSpec& spec) {
  const double fracs[3] = {spec.train_frac, spec.val_frac, spec.test_frac};
  double total = 0.0;
  for (double f : fracs) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw ConfigError("split fractions must be non-negative");
    total += f;
  }
  if (total <= 0.0) throw ConfigError("split fractions are all zero");
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("split fractions must sum to 1");

  std::vector<std::string> patients;
  for (const auto& s : studies) patients.push_back(s.patient_id);
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
  if (patients.empty()) throw InputError("split_patients: no patients");

  Rng rng(spec.seed);
  shuffle(std::span<std::string>(patients), rng);

  // Largest-remainder targets; remainder ties go to the earlier partition.
  const std::size_t n = patients.size();
  std::size_t counts[3];
  double remainders[3];
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = fracs[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    remainders[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  int order[3] = {0, 1, 2};
  std::stable_sort(order, order + 3, [&](int a, int b) { return remainders[a] > remainders[b]; });
  for (int i = 0; assigned < n; i = (i + 1) % 3) {
    ++counts[order[i]];
    ++assigned;
  }

  std::map<std::string, int> bucket;
  std::size_t pos = 0;
  for (int k = 0; k < 3; ++k)
    for (std::size_t c = 0; c < counts[k]; ++c) bucket[patients[pos++]] = k;

  DatasetSplit out;
  std::vector<Study>* parts[3] = {&out.train, &out.val, &out.test};
  for (const auto& s : studies) parts[bucket.at(s.patient_id)]->push_back(s);
  return out;
}

std::size_t subsample_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ConfigError("subsample fraction must lie in (0, 1], got " + std::to_string(fraction));
  if (n == 0) return 0;
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
  return std::clamp<std::size_t>(k, 1, n);
}

std::vector<Study> subsample_fraction(const std::vector<Study>& studies, double fraction,
                                      std::uint64_t seed) {
  const std::size_t k = subsample_count(studies.size(), fraction);
  if (fraction == 1.0) return studies;
  std::vector<std::size_t> idx(studies.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  shuffle(std::span<std::size_t>(idx), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<Study> out;
  out.reserve(k);
  for (std::size_t i : idx) out.push_back(studies[i]);
  return out;
}

std::vector<ImageRecord> flatten(const std::vector<Study>& studies) {
  std::vector<ImageRecord> out;
  for (const auto& s : studies) out.insert(out.end(), s.images.begin(), s.images.end());
  return out;
}

}  // namespace mama
