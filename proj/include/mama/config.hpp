#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mama/caption.hpp"
#include "mama/encoder.hpp"
#include "mama/eval.hpp"
#include "mama/multiview.hpp"
#include "mama/records.hpp"
#include "mama/synthetic.hpp"
#include "mama/trainer.hpp"

namespace mama {

// Flat `section.key = value` settings. Every key is known up front; setting
// an unknown key or a value of the wrong type throws ConfigError.
//
// File syntax:
//   # comment
//   [train]
//   lr = 0.002
class RunConfig {
 public:
  // "desk" (CPU-sized) or "full" (large-scale schedule).
  static RunConfig preset(std::string_view name);

  void set(const std::string& key, const std::string& value);
  void merge_text(std::string_view text, const std::string& origin = "config");
  void merge_file(const std::filesystem::path& path);

  const std::string& get(const std::string& key) const;
  double get_real(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  bool contains(const std::string& key) const;

  // Canonical text form (parsable by merge_text), grouped by section.
  std::string echo() const;
  std::vector<std::string> keys() const;

  std::uint64_t seed() const { return get_u64("run.seed"); }
  EncoderConfig encoder() const;
  TrainConfig train() const;
  SynthConfig synth() const;
  AugmentConfig augment() const;
  SamplingStrategy strategy() const;
  SplitSpec split() const;
  ProbeConfig probe() const;
  FinetuneConfig finetune() const;
  ZeroShotSpec zero_shot() const;
  SynthTarget target() const;
  std::size_t num_classes() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mama
