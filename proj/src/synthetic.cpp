#include "mama/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "mama/csv.hpp"
#include "mama/errors.hpp"
#include "mama/image_io.hpp"

namespace mama {

namespace {

const std::vector<std::string> kFindings = {
    "a circumscribed mass",   "grouped calcifications", "an architectural distortion", "a focal asymmetry",
    "a spiculated mass",      "linear calcifications",  "skin thickening",
};

// (cycles per tile vertically, horizontally) for each class texture
const std::vector<std::pair<double, double>> kTextureFreq = {
    {0.0, 0.5}, {0.5, 0.0}, {0.5, 0.5}, {0.25, 0.0}, {0.0, 0.25}, {0.25, 0.25}, {0.25, -0.25},
};

const std::vector<std::string> kRaces = {"white", "black", "asian", "other"};
const std::vector<std::string> kEthnicities = {"hispanic", "not hispanic"};
const std::vector<std::pair<std::string, std::string>> kUnits = {
    {"Hologic", "Selenia"}, {"GE", "Senographe"}, {"Siemens", "Mammomat"}, {"Fujifilm", "Amulet"}};

std::size_t draw_class(const SynthConfig& c, Rng& rng) {
  if (c.class_prior.empty()) return uniform_index(rng, c.num_classes);
  const double total = std::accumulate(c.class_prior.begin(), c.class_prior.end(), 0.0);
  double u = uniform01(rng) * total;
  for (std::size_t k = 0; k < c.class_prior.size(); ++k) {
    if (u < c.class_prior[k]) return k;
    u -= c.class_prior[k];
  }
  return c.class_prior.size() - 1;
}

std::string pad_number(std::size_t n, int width) {
  std::string s = std::to_string(n);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_patients == 0) throw ConfigError("num_patients must be positive");
  if (studies_per_patient == 0) throw ConfigError("studies_per_patient must be positive");
  if (views_per_study == 0 || views_per_study > 4) throw ConfigError("views_per_study must lie in [1, 4]");
  if (grid_rows == 0 || grid_cols == 0 || image_size % grid_rows || image_size % grid_cols)
    throw ConfigError("image_size must be divisible by the patch grid");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  const std::size_t limit = target == SynthTarget::Density ? 4 : 7;
  if (num_classes > limit || num_classes > kFindings.size())
    throw ConfigError("num_classes exceeds the " + to_string(target) + " domain");
  if (num_classes > grid_rows * grid_cols) throw ConfigError("more classes than grid cells");
  if (!class_prior.empty()) {
    if (class_prior.size() != num_classes) throw ConfigError("class_prior needs one weight per class");
    double s = 0.0;
    for (double p : class_prior) {
      if (p < 0.0) throw ConfigError("class_prior weights must be non-negative");
      s += p;
    }
    if (!(s > 0.0)) throw ConfigError("class_prior must have positive mass");
  }
  if (feature_strength < 0.0 || noise_level < 0.0 || field_amplitude < 0.0)
    throw ConfigError("synthetic amplitudes must be non-negative");
}

SynthConfig SynthConfig::birads_preset() {
  SynthConfig c;
  c.num_classes = 7;
  c.target = SynthTarget::Birads;
  c.class_prior = {0.10, 0.30, 0.25, 0.15, 0.10, 0.05, 0.05};
  return c;
}

std::string to_string(SynthTarget t) { return t == SynthTarget::Birads ? "birads" : "density"; }

SynthTarget parse_synth_target(std::string_view s) {
  if (s == "density") return SynthTarget::Density;
  if (s == "birads") return SynthTarget::Birads;
  throw ConfigError("unknown synthetic target '" + std::string(s) + "'");
}

std::size_t record_class(const ImageRecord& r, SynthTarget t) {
  return t == SynthTarget::Birads ? static_cast<std::size_t>(r.birads) : static_cast<std::size_t>(r.density);
}

std::size_t planted_cell(std::size_t cls, const SynthConfig& c) {
  const std::size_t p = c.grid_rows * c.grid_cols;
  // Step through the grid with a stride coprime to P so classes land on
  // distinct, spread-out cells.
  std::size_t stride = c.grid_cols + 1;
  while (std::gcd(stride, p) != 1) ++stride;
  return (cls * stride + c.grid_cols + 1) % p;
}

Matrix class_texture(std::size_t cls, std::size_t ph, std::size_t pw) {
  const auto [fy, fx] = kTextureFreq.at(cls);
  Matrix t(ph, pw);
  for (std::size_t y = 0; y < ph; ++y)
    for (std::size_t x = 0; x < pw; ++x) {
      const double phase = 2.0 * std::numbers::pi * (fy * (y + 0.5) + fx * (x + 0.5));
      t(y, x) = std::cos(phase) >= 0.0 ? 1.0 : -1.0;
    }
  double mean = 0.0;
  for (double v : t.values()) mean += v;
  mean /= static_cast<double>(t.size());
  for (double& v : t.values()) v -= mean;
  return t;
}

std::string class_findings(std::size_t cls) { return kFindings.at(cls); }

Matrix patient_field(const SynthConfig& c, Rng& rng) {
  const std::size_t n = c.image_size;
  Matrix f(n, n, 0.45);
  for (int s = 0; s < 3; ++s) {
    const double fy = uniform(rng, -1.0, 1.0), fx = uniform(rng, -1.0, 1.0);
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        f(y, x) += c.field_amplitude *
                   std::sin(2.0 * std::numbers::pi * (fy * y + fx * x) / static_cast<double>(n) + phase);
  }
  return f;
}

SynthStudy generate_study(const std::string& patient_id, std::size_t study_index, std::size_t cls,
                          const MetaMap& patient_meta, const Matrix& field, const SynthConfig& c, Rng& rng) {
  if (cls >= c.num_classes) throw InputError("class index out of range");
  SynthStudy out;
  out.study.patient_id = patient_id;
  out.study.study_id = patient_id + "_S" + std::to_string(study_index + 1);

  MetaMap meta = patient_meta;
  const auto& unit = kUnits[uniform_index(rng, kUnits.size())];
  meta.set("procedure", bernoulli(rng, 0.8) ? "screening" : "diagnostic");
  meta.set("manufacturer", unit.first);
  meta.set("model", unit.second);
  meta.set("findings", class_findings(cls));

  Density density;
  Birads birads;
  if (c.target == SynthTarget::Density) {
    density = static_cast<Density>(cls);
    birads = bernoulli(rng, 0.5) ? Birads::Cat1 : Birads::Cat2;
  } else {
    birads = static_cast<Birads>(cls);
    density = static_cast<Density>(uniform_index(rng, 4));
  }

  const std::size_t ph = c.image_size / c.grid_rows, pw = c.image_size / c.grid_cols;
  const std::size_t cell = planted_cell(cls, c);
  const PlantedTruth truth{cls, cell / c.grid_cols, cell % c.grid_cols};
  const Matrix texture = class_texture(cls, ph, pw);

  const std::pair<Side, View> views[] = {
      {Side::Left, View::CC}, {Side::Left, View::MLO}, {Side::Right, View::CC}, {Side::Right, View::MLO}};
  for (std::size_t v = 0; v < c.views_per_study; ++v) {
    ImageRecord r;
    r.patient_id = patient_id;
    r.study_id = out.study.study_id;
    r.side = views[v].first;
    r.view = views[v].second;
    r.image_id = r.study_id + "_" + (r.side == Side::Left ? "L" : "R") + to_string(r.view);
    r.meta = meta;
    r.density = density;
    r.birads = birads;
    r.image_path = "images/" + r.image_id + ".pgm";

    Matrix img = field;
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t x = 0; x < pw; ++x) img(truth.cell_row * ph + y, truth.cell_col * pw + x) +=
                                             c.feature_strength * texture(y, x);
    for (double& px : img.values()) px = std::clamp(px + normal(rng, 0.0, c.noise_level), 0.0, 1.0);

    out.study.images.push_back(std::move(r));
    out.images.push_back(std::move(img));
    out.truth.push_back(truth);
  }
  return out;
}

SynthCorpus generate_corpus(const SynthConfig& c) {
  c.validate();
  SynthCorpus corpus;
  for (std::size_t p = 0; p < c.num_patients; ++p) {
    Rng rng(derive_seed(c.seed, p));
    const std::string pid = "P" + pad_number(p + 1, 4);
    MetaMap meta;
    meta.set("age", std::to_string(40 + uniform_index(rng, 40)));
    meta.set("race", kRaces[uniform_index(rng, kRaces.size())]);
    meta.set("ethnicity", kEthnicities[uniform_index(rng, kEthnicities.size())]);
    const Matrix field = patient_field(c, rng);
    for (std::size_t s = 0; s < c.studies_per_patient; ++s) {
      Rng srng(derive_seed(derive_seed(c.seed, p), s + 1));
      const std::size_t cls = draw_class(c, srng);
      SynthStudy st = generate_study(pid, s, cls, meta, field, c, srng);
      for (std::size_t i = 0; i < st.images.size(); ++i) {
        const std::string& id = st.study.images[i].image_id;
        corpus.images.emplace(id, std::move(st.images[i]));
        corpus.truth.emplace(id, st.truth[i]);
        corpus.records.push_back(std::move(st.study.images[i]));
      }
    }
  }
  return corpus;
}

std::string write_truth(const std::vector<ImageRecord>& records, const std::map<std::string, PlantedTruth>& truth) {
  std::string out = std::string(kTruthHeader) + "\n";
  for (const auto& r : records) {
    const PlantedTruth& t = truth.at(r.image_id);
    out += csv::join({r.image_id, std::to_string(t.cls), std::to_string(t.cell_row), std::to_string(t.cell_col)}) +
           "\n";
  }
  return out;
}

std::map<std::string, PlantedTruth> parse_truth(std::string_view text) {
  const auto rows = csv::parse(text);
  if (rows.empty() || csv::join(rows.front()) != kTruthHeader)
    throw SchemaError(std::string("truth sidecar must start with '") + kTruthHeader + "'");
  std::map<std::string, PlantedTruth> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 4) throw RowError(i, "expected 4 fields");
    try {
      out[r[0]] = {std::stoul(r[1]), std::stoul(r[2]), std::stoul(r[3])};
    } catch (const std::logic_error&) {
      throw RowError(i, "non-integer field");
    }
  }
  return out;
}

namespace {
void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
  if (!f) throw IoError("cannot write '" + p.string() + "'");
}
}  // namespace

void generate_dataset(const SynthConfig& c, const std::filesystem::path& out_dir) {
  const SynthCorpus corpus = generate_corpus(c);
  std::filesystem::create_directories(out_dir / "images");
  for (const auto& r : corpus.records) write_pgm(out_dir / r.image_path, corpus.images.at(r.image_id), 16);
  write_text(out_dir / "records.csv", write_records(corpus.records));
  write_text(out_dir / "truth.csv", write_truth(corpus.records, corpus.truth));
}

}  // namespace mama
