// mama: command-line front end for the pipeline.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mama/errors.hpp"
#include "mama/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mama;

namespace {

struct Common {
  std::string preset = "desk";
  std::vector<std::string> config_files;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--preset", c.preset, "Base settings")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--config", c.config_files, "Config file(s), applied in order")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override one key: section.key=value");
  cmd->add_option("--seed", c.seed, "Run seed (beats MAMA_SEED)");
}

// preset < config files < --set < command flags < MAMA_SEED < --seed
RunConfig build_config(const Common& c, const std::map<std::string, std::string>& flags) {
  RunConfig cfg = RunConfig::preset(c.preset);
  for (const auto& f : c.config_files) cfg.merge_file(f);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t");
      const auto e = v.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  for (const auto& [k, v] : flags) cfg.set(k, v);
  if (const char* env = std::getenv("MAMA_SEED"); env && *env) cfg.set("run.seed", env);
  if (c.seed) cfg.set("run.seed", std::to_string(*c.seed));
  return cfg;
}

std::string view_key(const std::string& flag) {
  static const std::map<std::string, std::string> m = {{"same", "same_image"},
                                                       {"intra-side", "intra_side"},
                                                       {"intra-study-no-self", "intra_study_no_self"},
                                                       {"intra-study", "intra_study"}};
  return m.at(flag);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view image-text pretraining on a CPU"};
  app.require_subcommand(1);

  Common synth_c, cap_c, pre_c, eval_c, map_c;

  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  add_common(synth, synth_c);
  synth->add_option("--out", synth_out, "Output directory")->required();

  CaptionRequest cap_req;
  std::string cap_data, cap_out, cap_style;
  std::optional<double> cap_mask;
  auto* captions = app.add_subcommand("captions", "Dump one caption per image");
  add_common(captions, cap_c);
  captions->add_option("--data", cap_data, "records.csv")->required()->check(CLI::ExistingFile);
  captions->add_option("--out", cap_out, "Output CSV")->required();
  captions->add_option("--style", cap_style, "Caption style")->check(CLI::IsMember({"structured", "clip", "tabular"}));
  captions->add_option("--mask-prob", cap_mask, "Per-segment drop probability")->check(CLI::Range(0.0, 1.0));

  std::string pre_data, pre_out, pre_views, pre_resume;
  std::optional<std::int64_t> pre_steps;
  bool no_sla = false, no_sym = false, no_vv = false, no_lora = false;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the encoders");
  add_common(pretrain, pre_c);
  pretrain->add_option("--data", pre_data, "records.csv")->required()->check(CLI::ExistingFile);
  pretrain->add_option("--out", pre_out, "Run directory")->required();
  pretrain->add_option("--views", pre_views, "Positive view sampling")
      ->check(CLI::IsMember({"same", "intra-side", "intra-study-no-self", "intra-study"}));
  pretrain->add_option("--steps", pre_steps, "Total optimizer steps")->check(CLI::PositiveNumber);
  pretrain->add_option("--resume", pre_resume, "Checkpoint directory to resume from")->check(CLI::ExistingDirectory);
  pretrain->add_flag("--no-sla", no_sla, "Disable the local alignment loss");
  pretrain->add_flag("--no-symmetric-vt", no_sym, "Drop the positive-view image-text term");
  pretrain->add_flag("--no-vv", no_vv, "Drop the image-image term");
  pretrain->add_flag("--no-lora", no_lora, "Train the full text encoder");

  std::string eval_data, eval_ckpt, eval_out, eval_mode;
  std::optional<double> eval_fraction;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, eval_c);
  eval->add_option("--data", eval_data, "records.csv")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", eval_out, "Output directory")->required();
  eval->add_option("--mode", eval_mode, "Protocol")->check(CLI::IsMember({"zeroshot", "probe", "finetune"}));
  eval->add_option("--fraction", eval_fraction, "Labeled training fraction")->check(CLI::Range(0.0, 1.0));

  std::string map_data, map_ckpt, map_out, map_format;
  std::optional<long> map_index;
  auto* simmap = app.add_subcommand("simmap", "Export sentence-to-patch similarity maps");
  add_common(simmap, map_c);
  simmap->add_option("--data", map_data, "records.csv")->required()->check(CLI::ExistingFile);
  simmap->add_option("--checkpoint", map_ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  simmap->add_option("--out", map_out, "Output directory")->required();
  simmap->add_option("--sentence-index", map_index, "Sentence to map (default: the findings sentence)")
      ->check(CLI::NonNegativeNumber);
  simmap->add_option("--format", map_format, "Output format")->check(CLI::IsMember({"csv", "pgm"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) {
      run_synth(build_config(synth_c, {}), synth_out);
    } else if (*captions) {
      std::map<std::string, std::string> flags;
      if (!cap_style.empty()) flags["caption.style"] = cap_style;
      if (cap_mask) flags["caption.mask_prob"] = std::to_string(*cap_mask);
      const RunConfig cfg = build_config(cap_c, flags);
      cap_req.data_csv = cap_data;
      cap_req.out_csv = cap_out;
      run_captions(cfg, cap_req);
    } else if (*pretrain) {
      std::map<std::string, std::string> flags;
      if (!pre_views.empty()) flags["views.strategy"] = view_key(pre_views);
      if (pre_steps) flags["train.total_steps"] = std::to_string(*pre_steps);
      if (no_sla) flags["loss.use_sla"] = "false";
      if (no_sym) flags["loss.symmetric_vt"] = "false";
      if (no_vv) flags["loss.use_vv"] = "false";
      if (no_lora) flags["model.use_lora"] = "false";
      PretrainRequest req{pre_data, pre_out, std::nullopt};
      if (!pre_resume.empty()) req.resume_from = fs::path(pre_resume);
      run_pretrain(build_config(pre_c, flags), req);
    } else if (*eval) {
      std::map<std::string, std::string> flags;
      if (!eval_mode.empty()) flags["eval.mode"] = eval_mode;
      if (eval_fraction) flags["eval.fraction"] = std::to_string(*eval_fraction);
      const EvalReport r = run_eval(build_config(eval_c, flags), {eval_data, eval_ckpt, eval_out});
      std::printf("%s balanced_accuracy=%.4f auc=%s\n", r.mode.c_str(), r.balanced_accuracy,
                  r.auc ? std::to_string(*r.auc).c_str() : "n/a");
    } else if (*simmap) {
      std::map<std::string, std::string> flags;
      if (map_index) flags["simmap.sentence_index"] = std::to_string(*map_index);
      if (!map_format.empty()) flags["simmap.format"] = map_format;
      run_simmap(build_config(map_c, flags), {map_data, map_ckpt, map_out});
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mama: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
