#include "wisense/config.hpp"
#include "wisense/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>

namespace pl = wisense::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Synthetic CSI to language pipeline: corpus synthesis, alignment, captioning and evaluation"};
  app.require_subcommand(1, 1);

  pl::Options opt;
  opt.log = [](const std::string& m) { std::cerr << m << std::endl; };
  std::string config_path, out = "runs/default", holdout, backend;
  std::uint64_t seed = 0;
  bool quiet = false;

  const std::map<std::string, std::string> about = {
      {"synth", "generate the synthetic CSI corpus and manifest"},
      {"train-align", "stage 1: contrastive CSI-text alignment"},
      {"train-gen", "stage 2: projector, LoRA and placeholder training"},
      {"eval", "generate captions and score them"},
      {"zeroshot", "retrain stage 1 without held-out classes and classify them"},
      {"judge", "score generations with the judge backend"},
      {"report", "write markdown and CSV tables"}};

  for (const auto& name : pl::command_names()) {
    auto* sub = app.add_subcommand(name, about.count(name) ? about.at(name) : "");
    sub->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--out", out, "output directory")->capture_default_str();
    sub->add_flag("--overwrite", opt.overwrite, "replace existing outputs");
    sub->add_flag("--quiet", quiet, "no progress output");
    if (name == "train-align" || name == "zeroshot")
      sub->add_flag("--freeze-encoder", opt.freeze_encoder, "train only the adapter in stage 1");
    if (name == "zeroshot") sub->add_option("--holdout", holdout, "comma-separated class labels to hold out");
    if (name == "judge")
      sub->add_option("--backend", backend, "judge backend")->check(CLI::IsMember({"remote", "mock"}));
  }

  CLI11_PARSE(app, argc, argv);
  const auto* sub = app.get_subcommands().front();
  opt.config_path = config_path;
  opt.out = out;
  if (sub->count("--seed")) opt.seed = seed;
  if (!backend.empty()) opt.backend = backend;
  if (quiet) opt.log = nullptr;

  try {
    if (!holdout.empty()) opt.holdout = wisense::config::parse_holdout(holdout);
    pl::run(sub->get_name(), opt);
  } catch (const std::exception& e) {
    std::cerr << "wisense " << sub->get_name() << ": error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
