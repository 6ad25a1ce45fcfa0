#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mama/caption.hpp"
#include "mama/encoder.hpp"
#include "mama/multiview.hpp"
#include "mama/records.hpp"
#include "mama/synthetic.hpp"
#include "mama/trainer.hpp"

namespace mama {

using Confusion = std::vector<std::vector<std::int64_t>>;  // [true][predicted]

Confusion confusion_matrix(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& predictions,
                           std::size_t num_classes);
// Recall per class; absent for classes with no support.
std::vector<std::optional<double>> per_class_recall(const Confusion& c);
// Mean recall over classes with support. InputError on an empty matrix.
double balanced_accuracy(const Confusion& c);
// Mann-Whitney statistic with midranks; absent unless both groups are non-empty.
std::optional<double> binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive);
// Binary (K = 2): column 1 is the positive score. K > 2: macro one-vs-rest
// over classes that have both positives and negatives.
std::optional<double> auc(const Matrix& scores, const std::vector<std::size_t>& labels);
// Class 1 is positive.
std::pair<std::optional<double>, std::optional<double>> sensitivity_specificity(const Confusion& c);

// Lowest index wins ties.
std::size_t argmax_row(const Matrix& m, std::size_t row);
Matrix softmax_rows(const Matrix& scores, double temperature);

struct EvalReport {
  std::string mode;
  std::size_t num_classes = 0;
  std::size_t num_samples = 0;
  double balanced_accuracy = 0;
  std::optional<double> auc;
  std::optional<double> sensitivity, specificity;
  std::vector<std::optional<double>> per_class_recall;  // absent = no support or not learnable
  Confusion confusion;
  std::vector<std::string> warnings;
  double fraction = 1.0;

  std::string to_json() const;
  std::string confusion_csv() const;
};

// Builds a report from per-sample probabilities. Classes listed in
// `excluded` have their recall marked absent and are left out of the bACC.
EvalReport make_report(const std::string& mode, const Matrix& probabilities, const std::vector<std::size_t>& labels,
                       std::size_t num_classes, const std::vector<std::size_t>& excluded = {});

// ---- zero-shot ---------------------------------------------------------------------

struct ZeroShotSpec {
  SynthTarget target = SynthTarget::Density;
  std::vector<std::string> class_labels;  // e.g. A..D, or 0..6
  double temperature_for_probs = 0.1;

  static ZeroShotSpec for_target(SynthTarget target, std::size_t num_classes);
};

// Record copy with the target field set to the class label, then a structured
// caption without masking; clinical segments that do not mention the target
// field are omitted.
Caption zero_shot_prompt(const ImageRecord& record, const std::string& class_label, const ZeroShotSpec& spec,
                         const CaptionTemplate& tmpl);

struct ZeroShotResult {
  Matrix scores;         // N×K cosine similarities
  Matrix probabilities;  // softmax(scores / temperature)
  std::vector<std::size_t> predictions;
};

ZeroShotResult zero_shot_classify(const ParamStore& params, const EncoderConfig& encoder,
                                  const std::vector<ImageRecord>& records, const ImageLoader& load,
                                  const ZeroShotSpec& spec, const CaptionTemplate& tmpl);

// ---- embeddings / probe / fine-tune ---------------------------------------------------

// Unit-norm global image embeddings, one row per record (parallel over records).
Matrix image_embeddings(const ParamStore& params, const EncoderConfig& encoder,
                        const std::vector<ImageRecord>& records, const ImageLoader& load);

struct ProbeConfig {
  std::size_t steps = 300;
  double lr = 0.5;
  double weight_decay = 1e-4;
};

struct Standardizer {
  std::vector<double> mean, inv_std;
  static Standardizer fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
};

struct LinearHead {
  Matrix weight;  // K×d
  Matrix bias;    // 1×K
};

// Full-batch softmax regression on standardized features from a zero head.
LinearHead train_softmax_regression(const Matrix& features, const std::vector<std::size_t>& labels,
                                    std::size_t num_classes, const ProbeConfig& config);
Matrix head_probabilities(const LinearHead& head, const Matrix& features);

std::vector<std::size_t> labels_of(const std::vector<ImageRecord>& records, SynthTarget target);

EvalReport linear_probe(const ParamStore& params, const EncoderConfig& encoder, const std::vector<Study>& train,
                        const std::vector<Study>& test, double fraction, std::uint64_t seed, SynthTarget target,
                        std::size_t num_classes, const ProbeConfig& config, const ImageLoader& load);

struct FinetuneConfig {
  TrainConfig train;  // optimizer, lr, schedule, batch size, seed
  static FinetuneConfig full();
  static FinetuneConfig desk();
};

EvalReport full_finetune(const ParamStore& params, const EncoderConfig& encoder, const std::vector<Study>& train,
                         const std::vector<Study>& test, SynthTarget target, std::size_t num_classes,
                         const FinetuneConfig& config, const ImageLoader& load);

}  // namespace mama
