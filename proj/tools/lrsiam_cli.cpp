// Command-line front end. Every command goes through the C API in liblrsiam.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "lrsiam/lrsiam.h"

namespace {

void print_log(const char* message, void*) {
  std::fprintf(stderr, "%s\n", message);
  std::fflush(stderr);
}

const char* opt_cstr(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

int report(lrs_status st) {
  if (st != LRS_OK) {
    std::fprintf(stderr, "error (%s): %s\n", lrs_status_name(st), lrs_last_error());
  }
  return lrs_status_exit_code(st);
}

// Prints a returned JSON document (if any) to stdout and frees it.
int report_json(lrs_status st, char* json) {
  if (json) {
    std::printf("%s\n", json);
    lrs_string_free(json);
  }
  return report(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Activity recognition on 16x12 videos with multi-Siamese embedding learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", lrs_version());

  std::string config, out, manifest, mode, stream, checkpoint, split;
  bool force = false;
  std::size_t jobs = 1;
  std::size_t seeds = 0;

  auto* gen = app.add_subcommand("gen-toy", "Render the synthetic toy dataset");
  gen->add_option("--config", config, "Run config (JSON)")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_flag("--force", force, "Overwrite an existing dataset in --out");

  auto* prep = app.add_subcommand("prepare-lr", "Apply the transform grid and downsample to 16x12");
  prep->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  prep->add_option("--manifest", manifest, "HR manifest from gen-toy")->required();
  prep->add_option("--out", out, "Output directory")->required();
  prep->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* flow = app.add_subcommand("flow", "Precompute optical flow stacks for LR videos");
  flow->add_option("--manifest", manifest, "LR manifest from prepare-lr")->required();
  flow->add_option("--out", out, "Output directory")->required();
  flow->add_option("--config", config, "Run config supplying flow settings")->check(CLI::ExistingFile);
  flow->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Train and evaluate over the configured seeds");
  train->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--mode", mode, "baseline, augment, multi-siamese, a comma list, or all");
  train->add_option("--stream", stream, "one-stream or two-stream")
      ->check(CLI::IsMember({"one-stream", "two-stream"}));
  train->add_option("--out", out, "Run directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test part of a split");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint (.lrck)")->required();
  eval->add_option("--split", split, "Split name, e.g. half-0")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  grad->add_option("--seeds", seeds, "Seeds per case (default 20)");

  auto* embed = app.add_subcommand("embed", "Dump embeddings and the intra/inter distance ratio");
  embed->add_option("--checkpoint", checkpoint, "Model checkpoint (.lrck)")->required();
  embed->add_option("--manifest", manifest, "LR manifest with flow")->required();
  embed->add_option("--out", out, "Output directory")->required();
  embed->add_option("--split", split, "Restrict to the test sources of this split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  lrs_set_log_callback(print_log, nullptr);

  if (*gen) return report(lrs_gen_toy(opt_cstr(config), out.c_str(), force ? 1 : 0));
  if (*prep) return report(lrs_prepare_lr(config.c_str(), manifest.c_str(), out.c_str(), jobs));
  if (*flow) return report(lrs_flow(opt_cstr(config), manifest.c_str(), out.c_str(), jobs));
  char* json = nullptr;
  if (*train) {
    const lrs_status st =
        lrs_train(config.c_str(), opt_cstr(mode), opt_cstr(stream), out.c_str(), &json);
    return report_json(st, json);
  }
  if (*eval) {
    const lrs_status st = lrs_eval(checkpoint.c_str(), split.c_str(), &json);
    return report_json(st, json);
  }
  if (*grad) {
    const lrs_status st = lrs_gradcheck(seeds, &json);
    return report_json(st, json);
  }
  if (*embed) {
    const lrs_status st =
        lrs_embed(checkpoint.c_str(), manifest.c_str(), out.c_str(), opt_cstr(split), &json);
    return report_json(st, json);
  }
  return 1;
}
