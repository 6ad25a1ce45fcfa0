#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mama/encoder.hpp"
#include "mama/losses.hpp"
#include "mama/multiview.hpp"
#include "mama/random.hpp"

namespace mama {

enum class OptimizerKind { AdamW, Sgd };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct TrainConfig {
  double lr = 4e-5;
  double weight_decay = 0.1;
  std::int64_t total_steps = 40000;
  std::int64_t warmup_steps = 4000;
  std::size_t batch_size = 144;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // SGD only
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables
  Temperatures temperatures;
  LossOptions loss;  // loss.delta is the local-alignment switch step

  void validate() const;
  static TrainConfig full();  // full-scale schedule
  static TrainConfig desk();  // CPU-sized schedule
};

// Linear warmup to lr, then cosine decay to 0 at total_steps.
double lr_at(std::int64_t step, const TrainConfig& config);

inline const std::string kTau2Param = "loss.tau2";

struct TrainState {
  ParamStore params;  // encoder parameters plus loss.tau2
  std::map<std::string, Matrix> moment1, moment2;
  std::int64_t step = 0;
  Rng rng;
};

TrainState init_train_state(const EncoderConfig& encoder, const TrainConfig& config);

// A batch with captions already tokenized.
struct TokenBatch {
  std::vector<Matrix> primary, positive;
  std::vector<std::vector<int>> tokens;
  std::vector<std::size_t> sentence_counts;
};
TokenBatch tokenize_batch(const PairBatch& batch, const EncoderConfig& encoder);

// Forward + backward without an update. `gradients` receives d(total)/d(param)
// for every trainable parameter that received gradient.
LossBreakdown compute_gradients(const ParamStore& params, const TokenBatch& batch, const EncoderConfig& encoder,
                                const TrainConfig& config, std::int64_t step,
                                std::map<std::string, Matrix>* gradients);

// One optimizer update; increments state.step. Throws NumericError (carrying
// the breakdown) if the loss is not finite.
LossBreakdown train_step(TrainState& state, const TokenBatch& batch, const EncoderConfig& encoder,
                         const TrainConfig& config);

void apply_update(TrainState& state, std::map<std::string, Matrix>& gradients, double lr, const TrainConfig& config);

struct PretrainSetup {
  SamplingStrategy strategy = SamplingStrategy::IntraStudy;
  AugmentConfig augment;
  CaptionStyle caption_style = CaptionStyle::Structured;
  double mask_prob = 0.8;
  const CaptionTemplate* caption_template = nullptr;  // null = built-in template
};

CaptionFn make_caption_fn(CaptionStyle style, const CaptionTemplate& tmpl, double mask_prob);

using StepCallback = std::function<void(std::int64_t step, double lr, const LossBreakdown&)>;

// Runs from state.step up to (excluding) end_step, drawing every batch from
// state.rng so a resumed run continues the same batch sequence.
void pretrain(TrainState& state, const std::vector<Study>& studies, const ImageLoader& load,
              const EncoderConfig& encoder, const TrainConfig& config, const PretrainSetup& setup,
              std::int64_t end_step, const StepCallback& on_step = {});

// ---- metrics log ----------------------------------------------------------------

inline constexpr const char* kMetricsHeader = "step,lr,l_vv,l_vt_primary,l_vt_positive,l_local_v,l_local_t,w,total";
std::string format_metrics_row(std::int64_t step, double lr, const LossBreakdown& b);
std::string format_real(double v);

// ---- checkpoints -------------------------------------------------------------------

// Writes <dir>/manifest.txt plus one .bin per array, via a sibling temp
// directory renamed into place. `config_echo` is stored verbatim.
void save_checkpoint(const TrainState& state, const std::filesystem::path& dir, const EncoderConfig& encoder,
                     const std::string& config_echo);

struct LoadedCheckpoint {
  TrainState state;
  EncoderConfig encoder;
  std::string config_echo;
};
// VersionError on a manifest that is malformed, from another format version,
// or (when `expected` is given) describes different encoder shapes.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const EncoderConfig* expected = nullptr);

// Array file: "MAMA" magic, u32 version, u32 ndim, u32 dims[ndim], float32 LE data.
void write_array(const std::filesystem::path& path, const Matrix& m);
Matrix read_array(const std::filesystem::path& path);

std::string encoder_config_echo(const EncoderConfig& c);

}  // namespace mama
