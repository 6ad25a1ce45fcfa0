#include "mama/multiview.hpp"

#include <cmath>
#include <numbers>

#include "mama/errors.hpp"
#include "mama/image_io.hpp"

namespace mama {

std::string to_string(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::SameImage: return "same_image";
    case SamplingStrategy::IntraSide: return "intra_side";
    case SamplingStrategy::IntraStudyNoSelf: return "intra_study_no_self";
    case SamplingStrategy::IntraStudy: return "intra_study";
  }
  return {};
}

SamplingStrategy parse_sampling_strategy(std::string_view s) {
  for (auto k : {SamplingStrategy::SameImage, SamplingStrategy::IntraSide, SamplingStrategy::IntraStudyNoSelf,
                 SamplingStrategy::IntraStudy})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown sampling strategy '" + std::string(s) + "'");
}

const ImageRecord& sample_positive(const Study& study, const ImageRecord& anchor, SamplingStrategy strategy,
                                   Rng& rng) {
  const ImageRecord* self = nullptr;
  for (const auto& img : study.images)
    if (img.image_id == anchor.image_id) self = &img;
  if (!self)
    throw InputError("image '" + anchor.image_id + "' is not part of study '" + study.study_id + "'");

  std::vector<const ImageRecord*> pool;
  switch (strategy) {
    case SamplingStrategy::SameImage: return *self;
    case SamplingStrategy::IntraSide:
      for (const auto& img : study.images)
        if (img.side == self->side) pool.push_back(&img);
      break;
    case SamplingStrategy::IntraStudyNoSelf:
      for (const auto& img : study.images)
        if (&img != self) pool.push_back(&img);
      if (pool.empty()) return *self;
      break;
    case SamplingStrategy::IntraStudy:
      for (const auto& img : study.images) pool.push_back(&img);
      break;
  }
  return *pool[uniform_index(rng, pool.size())];
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.flip_prob = c.rotate_prob = c.crop_prob = c.jitter_prob = 0.0;
  return c;
}

Matrix flip_horizontal(const Matrix& image) {
  Matrix out(image.rows(), image.cols());
  for (std::size_t r = 0; r < image.rows(); ++r)
    for (std::size_t c = 0; c < image.cols(); ++c) out(r, c) = image(r, image.cols() - 1 - c);
  return out;
}

Matrix rotate_bilinear(const Matrix& image, double degrees) {
  const double th = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cy = (image.rows() - 1) / 2.0, cx = (image.cols() - 1) / 2.0;
  const auto h = static_cast<double>(image.rows()), w = static_cast<double>(image.cols());
  Matrix out(image.rows(), image.cols());
  for (std::size_t r = 0; r < image.rows(); ++r)
    for (std::size_t c = 0; c < image.cols(); ++c) {
      // inverse mapping; outside samples read as background (0)
      const double dy = r - cy, dx = c - cx;
      const double y = cs * dy - sn * dx + cy;
      const double x = sn * dy + cs * dx + cx;
      if (y < 0 || x < 0 || y > h - 1 || x > w - 1) continue;
      const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
      const std::size_t y1 = std::min(y0 + 1, image.rows() - 1), x1 = std::min(x0 + 1, image.cols() - 1);
      const double fy = y - y0, fx = x - x0;
      out(r, c) = (1 - fy) * ((1 - fx) * image(y0, x0) + fx * image(y0, x1)) +
                  fy * ((1 - fx) * image(y1, x0) + fx * image(y1, x1));
    }
  return out;
}

Matrix augment(const Matrix& image, Rng& rng, const AugmentConfig& cfg) {
  Matrix out = image;
  if (bernoulli(rng, cfg.flip_prob)) out = flip_horizontal(out);
  if (bernoulli(rng, cfg.rotate_prob))
    out = rotate_bilinear(out, uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg));
  if (bernoulli(rng, cfg.crop_prob)) {
    const double scale = std::sqrt(uniform(rng, cfg.crop_scale_min, cfg.crop_scale_max));
    const auto ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(scale * out.rows())));
    const auto cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(scale * out.cols())));
    const std::size_t oy = uniform_index(rng, out.rows() - ch + 1);
    const std::size_t ox = uniform_index(rng, out.cols() - cw + 1);
    Matrix crop(ch, cw);
    for (std::size_t r = 0; r < ch; ++r)
      for (std::size_t c = 0; c < cw; ++c) crop(r, c) = out(oy + r, ox + c);
    out = resize_bilinear(crop, out.rows(), out.cols());
  }
  if (bernoulli(rng, cfg.jitter_prob)) {
    const double shift = uniform(rng, -cfg.brightness, cfg.brightness);
    const double gain = uniform(rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast);
    for (double& v : out.values()) v = std::clamp(v * gain + shift, 0.0, 1.0);
  }
  return out;
}

PairBatch assemble_batch(const std::vector<Study>& studies, std::size_t batch_size, SamplingStrategy strategy,
                         const CaptionFn& caption_fn, const ImageLoader& load, const AugmentConfig& augment_config,
                         Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::pair<std::size_t, std::size_t>> index;  // (study, image)
  for (std::size_t s = 0; s < studies.size(); ++s)
    for (std::size_t i = 0; i < studies[s].images.size(); ++i) index.emplace_back(s, i);
  if (index.empty()) throw InputError("cannot assemble a batch from an empty dataset");

  std::vector<std::pair<std::size_t, std::uint64_t>> slots(batch_size);
  for (auto& [which, seed] : slots) {
    which = uniform_index(rng, index.size());
    seed = rng();
  }

  PairBatch batch;
  for (const auto& [which, seed] : slots) {
    Rng slot_rng(seed);
    const Study& study = studies[index[which].first];
    const ImageRecord& anchor = study.images[index[which].second];
    const ImageRecord& positive = sample_positive(study, anchor, strategy, slot_rng);
    batch.primary_images.push_back(augment(load(anchor), slot_rng, augment_config));
    batch.positive_images.push_back(augment(load(positive), slot_rng, augment_config));
    batch.captions.push_back(caption_fn(anchor, slot_rng));
    batch.records.push_back(anchor);
    batch.positive_records.push_back(positive);
  }
  return batch;
}

}  // namespace mama
