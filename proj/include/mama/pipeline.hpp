#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "mama/config.hpp"
#include "mama/simmap.hpp"

namespace mama {

inline constexpr const char* kConfigEchoName = "config.ini";

// Each command writes the effective config to <out>/config.ini.

// Synthetic corpus: records.csv, images/, truth.csv.
void run_synth(const RunConfig& config, const std::filesystem::path& out_dir);

struct CaptionRequest {
  std::filesystem::path data_csv;
  std::filesystem::path out_csv;
  std::optional<CaptionStyle> style;  // default: caption.style
  std::optional<double> mask_prob;    // default: caption.mask_prob
};
// CSV with columns image_id,style,text.
void run_captions(const RunConfig& config, const CaptionRequest& request);

struct PretrainRequest {
  std::filesystem::path data_csv;
  std::filesystem::path out_dir;  // checkpoint/, metrics.csv
  std::optional<std::filesystem::path> resume_from;
};
void run_pretrain(const RunConfig& config, const PretrainRequest& request);

enum class EvalMode { ZeroShot, Probe, Finetune };
EvalMode parse_eval_mode(std::string_view s);
std::string to_string(EvalMode m);

struct EvalRequest {
  std::filesystem::path data_csv;
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir;  // report.json, confusion.csv
  std::optional<EvalMode> mode;
  std::optional<double> fraction;
};
EvalReport run_eval(const RunConfig& config, const EvalRequest& request);

struct SimmapRequest {
  std::filesystem::path data_csv;
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir;
  std::optional<long> sentence_index;
  std::optional<MapFormat> format;
};
// One map per test-split image (up to simmap.limit, 0 = all), plus index.csv.
void run_simmap(const RunConfig& config, const SimmapRequest& request);

const CaptionTemplate& resolve_template(const RunConfig& config, std::optional<CaptionTemplate>& storage);

}  // namespace mama
