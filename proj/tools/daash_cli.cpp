#include "daash/harness.hpp"
#include "daash/runtime.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  daash::configure_allocator();
  CLI::App app{"Differentiable attack-sequence search harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir, model_id, sequence_path, mode;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI experiment config (defaults when omitted)");
    sub->add_option("--seed", seed, "Master seed override");
    sub->add_option("--out", out_dir, "Output directory override");
  };
  CLI::App* train = app.add_subcommand("train", "Train standard and PGD-AT classifiers");
  CLI::App* search = app.add_subcommand("search", "Search the attack sequence for one model");
  CLI::App* evaluate = app.add_subcommand("evaluate", "ASR/SSIM table under the configured defenses");
  CLI::App* ablate = app.add_subcommand("ablate", "Stage sweep, random-alpha or transfer ablation");
  for (CLI::App* sub : {train, search, evaluate, ablate}) common(sub);
  for (CLI::App* sub : {search, evaluate, ablate}) sub->add_option("--model", model_id, "Model id, e.g. at-0");
  for (CLI::App* sub : {evaluate, ablate}) sub->add_option("--sequence", sequence_path, "AFSQ1 sequence file");
  ablate->add_option("--mode", mode, "stages | random-alpha | transfer")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    daash::ExperimentConfig cfg =
        config_path.empty() ? daash::ExperimentConfig{} : daash::load_experiment_config(config_path);
    for (CLI::App* sub : {train, search, evaluate, ablate}) {
      if (sub->count("--seed")) cfg.seed = seed;
      if (sub->count("--out")) cfg.out_dir = out_dir;
    }
    if (model_id.empty()) model_id = cfg.search_model;
    cfg.validate();
    std::optional<std::filesystem::path> sequence;
    if (!sequence_path.empty()) sequence = sequence_path;

    if (*train) {
      daash::cmd_train(cfg, std::cout);
    } else if (*search) {
      daash::cmd_search(cfg, model_id, std::cout);
    } else if (*evaluate) {
      daash::cmd_evaluate(cfg, model_id, sequence, std::cout);
    } else {
      daash::cmd_ablate(cfg, daash::parse_ablate_mode(mode), model_id, sequence, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return daash::exit_code_for(e);
  }
  return 0;
}
