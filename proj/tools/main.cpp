#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ear/checkpoint.hpp"
#include "ear/config.hpp"
#include "ear/errors.hpp"
#include "ear/manifest.hpp"
#include "ear/model.hpp"
#include "ear/sampler.hpp"
#include "ear/scorer.hpp"
#include "ear/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kOutputRootEnv = "EAR_OUTPUT_ROOT";

// Exit codes: 0 success, 2 configuration/input errors, 3 validation errors,
// 1 internal errors.
constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitValidation = 3;

fs::path default_output(const std::string& leaf) {
  const char* root = std::getenv(kOutputRootEnv);
  if (!root || !*root) {
    throw ear::ConfigError("no --out given and " + std::string(kOutputRootEnv) +
                           " is not set");
  }
  return fs::path(root) / leaf;
}

// Turns leftover `--section.key value` / `--section.key=value` tokens into
// config overrides.
void apply_cli_overrides(ear::RunConfig& config,
                         const std::vector<std::string>& extras) {
  const std::vector<std::string>& tokens = extras;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    if (tok.rfind("--", 0) != 0) {
      throw ear::ConfigError("unrecognized argument: '" + tok +
                             "' (overrides look like --train.learning_rate 0.01)");
    }
    const std::string body = tok.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      config.apply_override(body.substr(0, eq), body.substr(eq + 1));
      continue;
    }
    if (i + 1 >= tokens.size()) {
      throw ear::ConfigError("override '" + tok + "' is missing a value");
    }
    config.apply_override(body, tokens[++i]);
  }
}

ear::RunConfig load_run_config(const std::string& config_file,
                               const std::string& profile,
                               const std::vector<std::string>& extras) {
  ear::RunConfig config;
  if (!config_file.empty()) {
    config = ear::RunConfig::from_file(config_file);
  } else if (!profile.empty()) {
    config = ear::RunConfig::from_profile(ear::profile_from_string(profile));
  } else {
    config = ear::RunConfig::desk_profile();
  }
  apply_cli_overrides(config, extras);
  config.resolve();
  return config;
}

void print_category_counts(const ear::Manifest& manifest) {
  const auto counts = ear::category_counts(manifest);
  for (const auto& name : ear::ear_label_names()) {
    const auto label = ear::ear_label_from_string(name);
    const auto it = counts.find(label);
    std::printf("%-14s %lld\n", name.c_str(),
                static_cast<long long>(it == counts.end() ? 0 : it->second));
  }
  std::printf("total          %lld\n", static_cast<long long>(manifest.size()));
}

// ---- manifest ---------------------------------------------------------

struct ManifestArgs {
  std::vector<std::string> roots;
  std::string mapping_file;
  std::string filter_file;
  std::string out_file;
  std::string unmapped = "error";
};

int run_manifest(const ManifestArgs& args) {
  std::vector<ear::ManifestRoot> roots;
  for (const auto& spec : args.roots) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) {
      throw ear::ConfigError("--root expects dataset=path, got '" + spec + "'");
    }
    roots.push_back(ear::ManifestRoot{
        fs::path(spec.substr(eq + 1)),
        ear::source_dataset_from_string(spec.substr(0, eq))});
  }

  ear::LabelMapping mapping = ear::load_label_mapping(args.mapping_file);
  mapping.unmapped_policy = args.unmapped == "drop"
                                ? ear::UnmappedPolicy::drop
                                : ear::UnmappedPolicy::error;
  std::vector<ear::SubsetFilter> filters;
  if (!args.filter_file.empty()) {
    filters = ear::load_subset_filters(args.filter_file);
  }

  const ear::Manifest manifest = ear::build_manifest(roots, mapping, filters);
  const fs::path out = args.out_file.empty()
                           ? default_output("manifest.csv")
                           : fs::path(args.out_file);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  ear::write_manifest_csv(manifest, out);

  if (manifest.empty()) {
    std::fprintf(stderr, "warning: manifest is empty\n");
  }
  print_category_counts(manifest);
  std::printf("wrote %s\n", out.string().c_str());
  return kExitOk;
}

// ---- train ------------------------------------------------------------

struct TrainArgs {
  std::string config_file;
  std::string profile;
  std::string manifest_file;
  std::string train_manifest_file;
  std::string val_manifest_file;
  double holdout = 0.1;
  std::string out_dir;
  bool resume = false;
  std::vector<std::string> extras;
};

int run_train(const TrainArgs& args) {
  ear::RunConfig config =
      load_run_config(args.config_file, args.profile, args.extras);

  const auto issues = config.validate();
  if (!issues.empty()) {
    std::fprintf(stderr, "config validation failed:\n");
    for (const auto& issue : issues) {
      std::fprintf(stderr, "  - %s\n", issue.c_str());
    }
    return kExitConfig;
  }

  ear::Manifest train_manifest, val_manifest;
  std::vector<std::string> split_notes;
  if (!args.manifest_file.empty()) {
    const ear::Manifest full = ear::read_manifest_csv(args.manifest_file);
    const ear::ManifestSplit split =
        ear::split_manifest(full, args.holdout, config.seed);
    train_manifest = split.train;
    val_manifest = split.validation;
    for (const auto label : split.report.underfilled_categories) {
      split_notes.push_back("category " + ear::to_string(label) +
                            " has < 2 videos; kept entirely in train");
    }
  } else if (!args.train_manifest_file.empty() &&
             !args.val_manifest_file.empty()) {
    train_manifest = ear::read_manifest_csv(args.train_manifest_file);
    val_manifest = ear::read_manifest_csv(args.val_manifest_file);
  } else {
    throw ear::ConfigError(
        "train needs either --manifest or both --train-manifest and "
        "--val-manifest");
  }

  fs::path run_dir;
  if (!args.out_dir.empty()) {
    run_dir = args.out_dir;
  } else if (!config.paths.output_dir.empty()) {
    run_dir = config.paths.output_dir;
  } else {
    run_dir = default_output("train");
  }
  fs::create_directories(run_dir);

  // Resolved config snapshot, every default materialized.
  {
    std::ofstream echo(run_dir / "config.json", std::ios::binary);
    echo << config.to_json_text();
  }
  if (!split_notes.empty()) {
    std::ofstream report(run_dir / "split_report.txt", std::ios::binary);
    for (const auto& note : split_notes) report << note << '\n';
  }

  auto model = ear::build_model(config.backbone, config.head, config.shift,
                                config.seed);
  const ear::TrainState state =
      ear::fit(*model, train_manifest, val_manifest, config.train, config.crop,
               run_dir, args.resume);

  std::printf("run dir: %s\n", run_dir.string().c_str());
  if (state.best_epoch >= 0) {
    std::printf("best epoch %lld, validation accuracy %.5f\n",
                static_cast<long long>(state.best_epoch),
                state.best_val_accuracy);
    std::printf("best checkpoint: %s\n",
                state.best_checkpoint_path.string().c_str());
  } else {
    std::printf("no epochs ran; config snapshot written\n");
  }
  return kExitOk;
}

// ---- infer ------------------------------------------------------------

struct InferArgs {
  std::string checkpoint_file;
  std::string manifest_file;
  std::string out_file;
  std::string config_file;
  bool lenient = false;
  std::int64_t batch_size = 4;
  std::int64_t workers = 1;
};

int run_infer(const InferArgs& args) {
  const ear::Checkpoint ckpt = ear::load_checkpoint(args.checkpoint_file);

  if (!args.config_file.empty()) {
    ear::RunConfig config = ear::RunConfig::from_file(args.config_file);
    config.resolve();
    const auto ckpt_desc =
        ear::describe_specs(ckpt.backbone, ckpt.head, ckpt.shift, ckpt.crop);
    const auto cfg_desc = ear::describe_specs(config.backbone, config.head,
                                              config.shift, config.crop);
    std::vector<std::string> diff;
    for (std::size_t i = 0; i < ckpt_desc.size(); ++i) {
      if (ckpt_desc[i] != cfg_desc[i]) {
        diff.push_back("checkpoint: " + ckpt_desc[i]);
        diff.push_back("config:     " + cfg_desc[i]);
      }
    }
    if (!diff.empty()) {
      std::fprintf(stderr,
                   "checkpoint and config disagree; refusing to run:\n");
      for (const auto& line : diff) {
        std::fprintf(stderr, "  %s\n", line.c_str());
      }
      return kExitConfig;
    }
  }

  ear::Model model(ckpt.backbone, ckpt.head, ckpt.shift, /*init_seed=*/0);
  model.load_state(ckpt.model_state);

  const ear::Manifest manifest = ear::read_manifest_csv(args.manifest_file);
  ear::FrameCache cache;
  ear::PredictReport report;
  const auto rows =
      ear::predict_all(model, manifest, ckpt.crop, !args.lenient, &report,
                       args.batch_size, args.workers, &cache);

  const fs::path out = args.out_file.empty()
                           ? default_output("submission.csv")
                           : fs::path(args.out_file);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  ear::write_submission_csv(rows, out);

  if (report.fallbacks > 0) {
    std::fprintf(stderr, "warning: %lld unreadable videos fell back to the "
                         "most frequent class\n",
                 static_cast<long long>(report.fallbacks));
  }
  std::printf("wrote %s (%lld rows)\n", out.string().c_str(),
              static_cast<long long>(rows.size()));
  return kExitOk;
}

// ---- score ------------------------------------------------------------

struct ScoreArgs {
  std::string submission_file;
  std::string truth_file;
  bool split = false;
  std::uint64_t split_seed = 0;
  bool confusion = false;
};

int run_score(const ScoreArgs& args) {
  const auto rows = ear::read_submission_csv(args.submission_file);
  const auto truth = ear::read_ground_truth_csv(args.truth_file);

  if (args.split) {
    std::vector<std::string> ids;
    ids.reserve(truth.size());
    for (const auto& [id, label] : truth) ids.push_back(id);
    const auto assignment = ear::make_split_assignment(ids, args.split_seed);
    const auto result = ear::split_score(rows, truth, assignment);
    std::printf("public %.5f\n", result.public_accuracy);
    std::printf("private %.5f\n", result.private_accuracy);
  } else {
    std::printf("%.5f\n", ear::score(rows, truth));
  }
  if (args.confusion) {
    // Diagnostic extra on stderr, away from the scored output.
    std::fputs(ear::render_confusion(ear::confusion_matrix(rows, truth)).c_str(),
               stderr);
  }
  return kExitOk;
}

// ---- report -----------------------------------------------------------

int run_report(const std::string& fixture_file) {
  const auto rows = ear::read_leaderboard_csv(fixture_file);
  std::fputs(ear::render_leaderboard(rows).c_str(), stdout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EAR action recognition toolkit: temporal-shift video "
               "classification, training, and challenge scoring"};
  app.require_subcommand(1);

  ManifestArgs manifest_args;
  auto* cmd_manifest =
      app.add_subcommand("manifest", "Scan frame-store roots into a manifest CSV");
  cmd_manifest->add_option("--root", manifest_args.roots,
                           "dataset=path (repeatable)")
      ->required();
  cmd_manifest->add_option("--mapping", manifest_args.mapping_file,
                           "label mapping file")
      ->required();
  cmd_manifest->add_option("--filters", manifest_args.filter_file,
                           "subject range filter file");
  cmd_manifest->add_option("--out", manifest_args.out_file, "manifest CSV path");
  cmd_manifest->add_option("--unmapped", manifest_args.unmapped,
                           "unmapped label policy: error|drop")
      ->check(CLI::IsMember({"error", "drop"}));

  TrainArgs train_args;
  auto* cmd_train =
      app.add_subcommand("train", "Run the training recipe end to end");
  auto* cfg_opt = cmd_train->add_option("--config", train_args.config_file,
                                        "JSON run config");
  cmd_train->add_option("--profile", train_args.profile,
                        "start from profile defaults: paper|desk")
      ->excludes(cfg_opt);
  cmd_train->add_option("--manifest", train_args.manifest_file,
                        "labeled manifest CSV, split by --holdout");
  cmd_train->add_option("--train-manifest", train_args.train_manifest_file);
  cmd_train->add_option("--val-manifest", train_args.val_manifest_file);
  cmd_train->add_option("--holdout", train_args.holdout,
                        "validation fraction for --manifest splits");
  cmd_train->add_option("--out", train_args.out_dir, "run directory");
  cmd_train->add_flag("--resume", train_args.resume,
                      "resume from checkpoint_last.ear in the run directory");
  cmd_train->allow_extras();

  InferArgs infer_args;
  auto* cmd_infer = app.add_subcommand(
      "infer", "Predict a test manifest and write a submission CSV");
  cmd_infer->add_option("--checkpoint", infer_args.checkpoint_file)->required();
  cmd_infer->add_option("--manifest", infer_args.manifest_file)->required();
  cmd_infer->add_option("--out", infer_args.out_file, "submission CSV path");
  cmd_infer->add_option("--config", infer_args.config_file,
                        "cross-check config against checkpoint specs");
  cmd_infer->add_flag("--lenient", infer_args.lenient,
                      "fall back on unreadable videos instead of aborting");
  cmd_infer->add_option("--batch-size", infer_args.batch_size);
  cmd_infer->add_option("--workers", infer_args.workers);

  ScoreArgs score_args;
  auto* cmd_score =
      app.add_subcommand("score", "Average accuracy of a submission");
  cmd_score->add_option("--submission", score_args.submission_file)->required();
  cmd_score->add_option("--truth", score_args.truth_file)->required();
  auto* split_opt = cmd_score->add_option("--split", score_args.split_seed,
                                          "also score a seeded public/private split");
  cmd_score->add_flag("--confusion", score_args.confusion,
                      "print a diagnostic confusion matrix to stderr");

  std::string report_fixture;
  auto* cmd_report =
      app.add_subcommand("report", "Render a leaderboard table from a fixture CSV");
  cmd_report->add_option("--fixture", report_fixture)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (cmd_manifest->parsed()) return run_manifest(manifest_args);
    if (cmd_train->parsed()) {
      train_args.extras = cmd_train->remaining();
      return run_train(train_args);
    }
    if (cmd_infer->parsed()) return run_infer(infer_args);
    if (cmd_score->parsed()) {
      score_args.split = split_opt->count() > 0;
      return run_score(score_args);
    }
    if (cmd_report->parsed()) return run_report(report_fixture);
  } catch (const ear::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const ear::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const ear::IngestError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitInternal;
}
