#pragma once

#include <functional>
#include <string_view>
#include <vector>

#include "mama/caption.hpp"
#include "mama/matrix.hpp"
#include "mama/random.hpp"
#include "mama/records.hpp"

namespace mama {

enum class SamplingStrategy { SameImage, IntraSide, IntraStudyNoSelf, IntraStudy };

std::string to_string(SamplingStrategy s);
// Accepts same_image, intra_side, intra_study_no_self, intra_study.
SamplingStrategy parse_sampling_strategy(std::string_view s);

// Anchor must be in the study (matched by image_id).
const ImageRecord& sample_positive(const Study& study, const ImageRecord& anchor, SamplingStrategy strategy,
                                   Rng& rng);

struct AugmentConfig {
  double flip_prob = 0.5;
  double rotate_prob = 0.5;
  double max_rotation_deg = 10.0;
  double crop_prob = 0.5;
  double crop_scale_min = 0.8;  // area fraction kept
  double crop_scale_max = 1.0;
  double jitter_prob = 0.5;
  double brightness = 0.1;  // additive, uniform in ±brightness
  double contrast = 0.1;    // multiplicative, uniform in 1±contrast

  static AugmentConfig none();
};

// Same shape out as in. Each transform draws its coin first and only then its
// parameters, so turning one transform off does not shift the others' draws.
Matrix augment(const Matrix& image, Rng& rng, const AugmentConfig& config);

Matrix rotate_bilinear(const Matrix& image, double degrees);
Matrix flip_horizontal(const Matrix& image);

struct PairBatch {
  std::vector<Matrix> primary_images;
  std::vector<Matrix> positive_images;
  std::vector<Caption> captions;
  std::vector<ImageRecord> records;           // anchor records
  std::vector<ImageRecord> positive_records;  // kept for invariant checks
};

using ImageLoader = std::function<const Matrix&(const ImageRecord&)>;
using CaptionFn = std::function<Caption(const ImageRecord&, Rng&)>;

// Anchors are drawn image-uniformly with `rng`; every slot then gets its own
// derived generator for the positive draw, both augmentations and the caption.
PairBatch assemble_batch(const std::vector<Study>& studies, std::size_t batch_size, SamplingStrategy strategy,
                         const CaptionFn& caption_fn, const ImageLoader& load, const AugmentConfig& augment_config,
                         Rng& rng);

}  // namespace mama
