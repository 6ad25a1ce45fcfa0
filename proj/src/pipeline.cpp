#include "mama/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "mama/csv.hpp"
#include "mama/dataset.hpp"
#include "mama/errors.hpp"
#include "mama/simmap.hpp"

namespace mama {

namespace fs = std::filesystem;

namespace {

void echo_config(const RunConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  write_text_file(dir / kConfigEchoName, config.echo());
}

DatasetSplit load_split(const RunConfig& config, const Dataset& data) {
  return split_patients(group_studies(data.records), config.split());
}

}  // namespace

const CaptionTemplate& resolve_template(const RunConfig& config, std::optional<CaptionTemplate>& storage) {
  const std::string path = config.get("caption.template");
  if (path.empty()) return CaptionTemplate::default_template();
  storage = CaptionTemplate::parse(read_text_file(path));
  return *storage;
}

void run_synth(const RunConfig& config, const fs::path& out_dir) {
  const SynthConfig sc = config.synth();
  generate_dataset(sc, out_dir);
  echo_config(config, out_dir);
}

void run_captions(const RunConfig& config, const CaptionRequest& req) {
  const Dataset data = load_dataset(req.data_csv);
  std::optional<CaptionTemplate> storage;
  const CaptionTemplate& tmpl = resolve_template(config, storage);
  const CaptionStyle style = req.style ? *req.style : [&] {
    const auto s = parse_caption_style(config.get("caption.style"));
    if (!s) throw ConfigError("unknown caption style '" + config.get("caption.style") + "'");
    return *s;
  }();
  const double mask = req.mask_prob ? *req.mask_prob : config.get_real("caption.mask_prob");
  const CaptionFn fn = make_caption_fn(style, tmpl, mask);
  Rng rng(derive_seed(config.seed(), 11));
  std::string out = "image_id,style,text\n";
  for (const auto& r : data.records) out += csv::join({r.image_id, to_string(style), fn(r, rng).text}) + "\n";
  const fs::path dir = req.out_csv.has_parent_path() ? req.out_csv.parent_path() : fs::path(".");
  echo_config(config, dir);
  write_text_file(req.out_csv, out);
}

void run_pretrain(const RunConfig& config, const PretrainRequest& req) {
  const EncoderConfig enc = config.encoder();
  const TrainConfig tc = config.train();
  const Dataset data = load_dataset(req.data_csv);
  const DatasetSplit split = load_split(config, data);
  if (split.train.empty()) throw InputError("the training split is empty");

  std::optional<CaptionTemplate> storage;
  PretrainSetup setup;
  setup.strategy = config.strategy();
  setup.augment = config.augment();
  const auto style = parse_caption_style(config.get("caption.style"));
  if (!style) throw ConfigError("unknown caption style '" + config.get("caption.style") + "'");
  setup.caption_style = *style;
  setup.mask_prob = config.get_real("caption.mask_prob");
  setup.caption_template = &resolve_template(config, storage);

  TrainState state = req.resume_from ? load_checkpoint(*req.resume_from, &enc).state : init_train_state(enc, tc);
  echo_config(config, req.out_dir);

  ImageCache cache(data.base_dir, enc.image_size);
  cache.preload(flatten(split.train));
  const ImageLoader load = [&cache](const ImageRecord& r) -> const Matrix& { return cache.get(r); };

  const fs::path metrics_path = req.out_dir / "metrics.csv";
  const bool append = req.resume_from && fs::exists(metrics_path);
  std::ofstream metrics(metrics_path, append ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot write '" + metrics_path.string() + "'");
  if (!append) metrics << kMetricsHeader << "\n";

  const std::int64_t every = config.get_int("train.checkpoint_every");
  const fs::path ckpt = req.out_dir / "checkpoint";
  const std::string echo = config.echo();
  pretrain(state, split.train, load, enc, tc, setup, tc.total_steps,
           [&](std::int64_t step, double lr, const LossBreakdown& b) {
             metrics << format_metrics_row(step, lr, b) << "\n";
             if (every > 0 && (step + 1) % every == 0) {
               metrics.flush();
               save_checkpoint(state, ckpt, enc, echo);
             }
           });
  metrics.flush();
  save_checkpoint(state, ckpt, enc, echo);
}

EvalMode parse_eval_mode(std::string_view s) {
  if (s == "zeroshot") return EvalMode::ZeroShot;
  if (s == "probe") return EvalMode::Probe;
  if (s == "finetune") return EvalMode::Finetune;
  throw ConfigError("unknown eval mode '" + std::string(s) + "'");
}

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::ZeroShot: return "zeroshot";
    case EvalMode::Probe: return "probe";
    case EvalMode::Finetune: return "finetune";
  }
  return {};
}

EvalReport run_eval(const RunConfig& config, const EvalRequest& req) {
  const EncoderConfig enc = config.encoder();
  const LoadedCheckpoint ck = load_checkpoint(req.checkpoint, &enc);
  const Dataset data = load_dataset(req.data_csv);
  const DatasetSplit split = load_split(config, data);
  if (split.test.empty()) throw InputError("the test split is empty");
  const EvalMode mode = req.mode ? *req.mode : parse_eval_mode(config.get("eval.mode"));
  const double fraction = req.fraction ? *req.fraction : config.get_real("eval.fraction");
  const SynthTarget target = config.target();
  const std::size_t k = config.num_classes();

  ImageCache cache(data.base_dir, enc.image_size);
  const ImageLoader load = [&cache](const ImageRecord& r) -> const Matrix& { return cache.get(r); };
  echo_config(config, req.out_dir);

  EvalReport report;
  switch (mode) {
    case EvalMode::ZeroShot: {
      std::optional<CaptionTemplate> storage;
      const auto test = flatten(split.test);
      const ZeroShotSpec spec = config.zero_shot();
      const ZeroShotResult zs = zero_shot_classify(ck.state.params, enc, test, load, spec,
                                                   resolve_template(config, storage));
      report = make_report("zeroshot", zs.probabilities, labels_of(test, target), k);
      break;
    }
    case EvalMode::Probe:
      report = linear_probe(ck.state.params, enc, split.train, split.test, fraction, config.seed(), target, k,
                            config.probe(), load);
      break;
    case EvalMode::Finetune:
      report = full_finetune(ck.state.params, enc, split.train, split.test, target, k, config.finetune(), load);
      break;
  }
  write_text_file(req.out_dir / "report.json", report.to_json());
  write_text_file(req.out_dir / "confusion.csv", report.confusion_csv());
  return report;
}

void run_simmap(const RunConfig& config, const SimmapRequest& req) {
  const EncoderConfig enc = config.encoder();
  const LoadedCheckpoint ck = load_checkpoint(req.checkpoint, &enc);
  const Dataset data = load_dataset(req.data_csv);
  const DatasetSplit split = load_split(config, data);
  std::optional<CaptionTemplate> storage;
  const CaptionTemplate& tmpl = resolve_template(config, storage);
  const MapFormat format = req.format ? *req.format : parse_map_format(config.get("simmap.format"));
  const long index = req.sentence_index ? *req.sentence_index : config.get_int("simmap.sentence_index");
  const bool normalize = config.get_bool("simmap.normalize") || format == MapFormat::Pgm;
  const auto segment = parse_segment(config.get("simmap.segment"));
  if (index < 0 && !segment) throw ConfigError("unknown simmap.segment '" + config.get("simmap.segment") + "'");
  const std::size_t limit = config.get_size("simmap.limit");

  ImageCache cache(data.base_dir, enc.image_size);
  echo_config(config, req.out_dir);
  std::string index_csv = "image_id,sentence_index,argmax_row,argmax_col,file,sentence\n";
  std::size_t done = 0;
  for (const auto& r : flatten(split.test)) {
    if (limit && done >= limit) break;
    Rng unused(0);
    const Caption cap = build_structured_caption(r, tmpl, 0.0, unused, {});
    const ImageTextCorrespondence corr = image_text_correspondence(ck.state.params, enc, cache.get(r), cap);
    std::size_t s;
    if (index >= 0) {
      s = static_cast<std::size_t>(index);
    } else {
      const auto found = cap.sentence_of(*segment);
      if (!found || *found >= corr.sentences.size()) continue;  // segment absent for this record
      s = *found;
    }
    SimilarityMap map = sentence_map(corr.matrix, s, enc.grid_rows, enc.grid_cols);
    map.sentence_text = corr.sentences.at(s);
    if (normalize) map = normalize_unit(map);
    const std::string file = r.image_id + "_s" + std::to_string(s) + (format == MapFormat::Pgm ? ".pgm" : ".csv");
    export_map(map, req.out_dir / file, format);
    const std::size_t cell = argmax_cell(map.grid);
    index_csv += csv::join({r.image_id, std::to_string(s), std::to_string(cell / enc.grid_cols),
                            std::to_string(cell % enc.grid_cols), file, map.sentence_text}) +
                 "\n";
    ++done;
  }
  write_text_file(req.out_dir / "index.csv", index_csv);
}

}  // namespace mama
