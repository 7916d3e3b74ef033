#pragma once

#include "daash/daash.hpp"
#include "daash/datasets.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace daash {

/// Everything one harness run needs. Loaded from an INI file whose sections
/// are [dataset], [model], [adversarial], [pool], [attack.<name>], [search],
/// [evaluate], [defense], [ablate] and [output]; `seed` sits at top level.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetSource dataset;

  ClassifierSpec model;
  TrainConfig train;
  std::vector<std::uint64_t> model_seeds{0, 1, 2};
  bool train_standard = true;
  bool train_adversarial = true;
  AttackSpec adversarial_pgd = at_default_pgd();

  SearchConfig search;
  std::string search_model = "at-0";
  Index search_samples = 256;

  Index eval_samples = 512;
  std::vector<DefenseSpec> defenses;

  std::vector<int> ablate_stages{1, 2, 3, 4, 5};
  int random_draws = 100;
  double random_lo = 0.0;
  double random_hi = 1.0;
  std::vector<std::string> transfer_models;  // empty = every trained model

  std::filesystem::path out_dir = "out";

  ExperimentConfig();

  /// Throws ConfigError on the first inconsistency. Checks referenced files
  /// and model ids without touching any output.
  void validate() const;

  /// "std-<seed>" and "at-<seed>" in training order.
  std::vector<std::string> model_ids() const;
  /// Per-command seeds derived from `seed`.
  DatasetSource dataset_source() const;
  TrainConfig train_config(const std::string& model_id) const;
  SearchConfig search_config() const;
  SearchConfig search_config(int stages) const;
  std::uint64_t baseline_salt() const;

  static AttackSpec at_default_pgd();
};

ExperimentConfig parse_experiment_config(const std::string& ini_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace daash
