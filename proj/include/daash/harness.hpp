#pragma once

#include "daash/config.hpp"

#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace daash {

/// A CSV-shaped report. Cells are already formatted.
struct ReportTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::string to_csv() const;
  /// Cell lookup by row key (first column) and column name.
  const std::string& at(const std::string& row_key, const std::string& column) const;
};

/// Output layout under the configured directory.
struct Workspace {
  std::filesystem::path root;

  std::filesystem::path model(const std::string& id) const { return root / "models" / (id + ".afrg"); }
  std::filesystem::path sequence(const std::string& id) const { return root / "sequences" / (id + ".afsq"); }
  std::filesystem::path curve(const std::string& id) const { return root / "curves" / (id + ".csv"); }
  std::filesystem::path report(const std::string& name) const { return root / "reports" / name; }
};

enum class AblateMode { Stages, RandomAlpha, Transfer };
AblateMode parse_ablate_mode(const std::string& name);
std::string ablate_mode_name(AblateMode mode);

/// Trains every configured model, writes models/<id>.afrg and
/// reports/train.csv, and returns the accuracy table.
ReportTable cmd_train(const ExperimentConfig& cfg, std::ostream& log);

/// Searches alpha on `model_id`; writes sequences/<id>.afsq and curves/<id>.csv.
AttackSequence cmd_search(const ExperimentConfig& cfg, const std::string& model_id, std::ostream& log);

/// ASR table (percent) for every pool attack and the sequence,
/// without defense and under each configured defense. Writes
/// reports/evaluate-<id>.csv (wide), reports/evaluate-<id>-long.csv and
/// reports/evaluate-<id>.json (per-sample records).
ReportTable cmd_evaluate(const ExperimentConfig& cfg, const std::string& model_id,
                         const std::optional<std::filesystem::path>& sequence, std::ostream& log);

/// stages: fresh search per N; random-alpha: trained vs random logits;
/// transfer: every searched sequence on every model.
ReportTable cmd_ablate(const ExperimentConfig& cfg, AblateMode mode, const std::string& model_id,
                       const std::optional<std::filesystem::path>& sequence, std::ostream& log);

/// The correctly classified prefix of the test split used for evaluation.
LabeledBatch evaluation_set(const ExperimentConfig& cfg, const TrainedModel& model);
/// The correctly classified prefix of the training split used for search.
LabeledBatch search_set(const ExperimentConfig& cfg, const TrainedModel& model);

/// 2 config, 3 numeric, 4 I/O, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace daash
