#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mama/matrix.hpp"
#include "mama/random.hpp"
#include "mama/records.hpp"

namespace mama {

// Which record field the class drives.
enum class SynthTarget { Density, Birads };

struct SynthConfig {
  std::size_t num_patients = 50;
  std::size_t studies_per_patient = 2;
  std::size_t views_per_study = 4;  // taken in order L-CC, L-MLO, R-CC, R-MLO
  std::size_t image_size = 32;
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;
  std::size_t num_classes = 4;
  double feature_strength = 0.4;   // amplitude of the planted texture
  double noise_level = 0.03;       // per-pixel Gaussian noise
  double field_amplitude = 0.06;   // per-sinusoid amplitude of the patient field
  std::vector<double> class_prior;  // empty = uniform
  SynthTarget target = SynthTarget::Density;
  std::uint64_t seed = 0;

  void validate() const;
  static SynthConfig birads_preset();  // seven classes mapped to BI-RADS 0-6
};

struct PlantedTruth {
  std::size_t cls = 0;
  std::size_t cell_row = 0;
  std::size_t cell_col = 0;
};

struct SynthStudy {
  Study study;
  std::vector<Matrix> images;  // parallel to study.images
  std::vector<PlantedTruth> truth;
};

struct SynthCorpus {
  std::vector<ImageRecord> records;
  std::map<std::string, Matrix> images;        // by image_id
  std::map<std::string, PlantedTruth> truth;   // by image_id
};

// Grid cell (row-major index) that carries class k's texture.
std::size_t planted_cell(std::size_t cls, const SynthConfig& config);
// Zero-mean ±1 texture of class k over a patch_h×patch_w tile.
Matrix class_texture(std::size_t cls, std::size_t patch_h, std::size_t patch_w);
// Findings phrase naming class k.
std::string class_findings(std::size_t cls);

// Shared smooth intensity field of one patient, in [0, 1] before noise.
Matrix patient_field(const SynthConfig& config, Rng& rng);

SynthStudy generate_study(const std::string& patient_id, std::size_t study_index, std::size_t cls,
                          const MetaMap& patient_meta, const Matrix& field, const SynthConfig& config, Rng& rng);

SynthCorpus generate_corpus(const SynthConfig& config);

// Writes records.csv, images/<image_id>.pgm (16-bit) and truth.csv under
// `out_dir`. Image paths in the CSV are relative to out_dir.
void generate_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

inline constexpr const char* kTruthHeader = "image_id,class,cell_row,cell_col";
std::string write_truth(const std::vector<ImageRecord>& records, const std::map<std::string, PlantedTruth>& truth);
std::map<std::string, PlantedTruth> parse_truth(std::string_view csv_text);

// Class label of a record under `target` (density index or BI-RADS category).
std::size_t record_class(const ImageRecord& record, SynthTarget target);
std::string to_string(SynthTarget t);
SynthTarget parse_synth_target(std::string_view s);

}  // namespace mama
