#pragma once

#include "daash/attacks.hpp"
#include "daash/defenses.hpp"
#include "daash/metrics.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace daash {

/// Learnable mixing logits: one row per stage, one column per pool entry.
struct AlphaMatrix {
  Tensor logits;  // (stages, pool)

  AlphaMatrix() = default;
  explicit AlphaMatrix(Tensor t);
  static AlphaMatrix zeros(Index stages, Index pool);
  /// Every row puts `value` on column `index` and 0 elsewhere.
  static AlphaMatrix saturated(Index stages, Index pool, Index index, double value = 30.0);

  Index stages() const { return logits.dim(0); }
  Index pool_size() const { return logits.dim(1); }
  Eigen::VectorXd row(Index stage) const;
};

/// Softmax of one stage's logits.
Eigen::VectorXd alpha_to_weights(const Eigen::VectorXd& row);

/// Outputs of every pool attack for one stage input, in pool order.
struct CandidateSet {
  std::vector<std::string> names;
  std::vector<Tensor> images;

  Index size() const { return static_cast<Index>(images.size()); }
};

/// Softmax-weighted convex combination of the candidates.
Tensor combine_candidates(const CandidateSet& candidates, const Eigen::VectorXd& row);
/// Same combination, differentiable with respect to `row` (shape (1, M)).
Var combine_candidates(Var row, const CandidateSet& candidates);

/// Runs every pool attack on `x`. Stochastic attacks get seeds derived from
/// their own seed and `salt`.
CandidateSet generate_candidates(const TrainedModel& model, const Tensor& x, std::span<const int> y,
                                 const std::vector<AttackSpec>& pool, std::uint64_t salt = 0);

/// One attack cell: candidates from `x_in`, combined under softmax(row), clipped to [0, 1].
Tensor run_stage(const TrainedModel& model, const Tensor& x_in, std::span<const int> y,
                 const std::vector<AttackSpec>& pool, const Eigen::VectorXd& row, std::uint64_t salt = 0);

/// Chains one cell per alpha row, feeding each output to the next stage.
Tensor run_pipeline(const TrainedModel& model, const Tensor& x, std::span<const int> y, const AlphaMatrix& alpha,
                    const std::vector<AttackSpec>& pool, std::uint64_t salt = 0);

struct MetaLossTerms {
  Var total;
  Var logits;
  Var true_class_prob;  // batch mean
  Var similarity;       // batch mean SSIM(x, x_a)
};

/// lambda_asr * mean p_y(x_a) + lambda_ssim * (1 - SSIM(x, x_a)).
MetaLossTerms meta_loss_terms(const TrainedModel& model, const Tensor& x, Var x_a, std::span<const int> y,
                              double lambda_asr, double lambda_ssim, const SsimConfig& cfg = {});
Var meta_loss(const TrainedModel& model, const Tensor& x, Var x_a, std::span<const int> y, double lambda_asr,
              double lambda_ssim, const SsimConfig& cfg = {});
double meta_loss_value(const TrainedModel& model, const Tensor& x, const Tensor& x_a, std::span<const int> y,
                       double lambda_asr, double lambda_ssim, const SsimConfig& cfg = {});

struct SearchConfig {
  int stages = 3;
  std::vector<AttackSpec> pool = default_pool();
  int epochs = 100;
  double lr = 0.001;
  double lambda_asr = 1.3;
  double lambda_ssim = 1.0;
  Index batch_size = 64;
  std::uint64_t seed = 0;
  SsimConfig ssim;

  void validate() const;
};

std::string serialize(const SearchConfig& cfg);
SearchConfig parse_search_config(const std::string& text);

/// Loss and alpha-gradient of one pipeline evaluation. Each stage's
/// perturbations (candidate minus stage input) are held constant, so the
/// gradient flows through the softmax weights, the combinations and the
/// chain of stage inputs, but not through the base attacks.
struct MetaObjective {
  double loss = 0.0;
  double asr = 0.0;
  double ssim = 0.0;
  Tensor grad;                            // (stages, pool)
  Tensor adversarial;                     // final stage output
  std::vector<Tensor> stage_inputs;       // x^0 .. x^{N-1}
  std::vector<CandidateSet> candidates;   // per stage
};

MetaObjective meta_objective(const TrainedModel& model, const Tensor& x, std::span<const int> y,
                             const AlphaMatrix& alpha, const SearchConfig& cfg, std::uint64_t salt);

struct CurvePoint {
  int epoch = 0;
  double loss = 0.0;
  double asr = 0.0;
  double ssim = 0.0;
};

struct AttackSequence {
  AlphaMatrix alpha;
  SearchConfig config;
  std::vector<CurvePoint> curve;
  int best_epoch = 0;  // 0 when no epoch ran
};

/// Learns alpha with Adam on minibatches of `data`; returns the alpha with
/// the lowest epoch loss (earliest on ties) and the per-epoch curve.
AttackSequence search(const TrainedModel& model, const LabeledBatch& data, const SearchConfig& cfg);

/// Uniform random logits in [lo, hi].
AlphaMatrix random_alpha(Index stages, Index pool, std::uint64_t seed, double lo, double hi);

struct EvaluationSummary {
  double asr = 0.0;
  double ssim = 1.0;  // mean, in [-1, 1]
  AttackOutcome outcome;

  double ssim_scaled() const { return 100.0 * ssim; }
};

/// Adversarial images for `data` from a frozen sequence, in minibatches.
Tensor generate_adversarial(const TrainedModel& model, const LabeledBatch& data, const AttackSequence& seq);
/// Stage-one candidates per evaluation chunk. They do not depend on alpha,
/// so many sequences sharing `cfg` can reuse them.
std::vector<CandidateSet> first_stage_candidates(const TrainedModel& model, const LabeledBatch& data,
                                                 const SearchConfig& cfg);
/// As above, reusing `first_stage` (empty = compute) for the first stage.
Tensor generate_adversarial(const TrainedModel& model, const LabeledBatch& data, const AttackSequence& seq,
                            const std::vector<CandidateSet>& first_stage);
/// Adversarial images from a single base attack, in minibatches.
Tensor generate_adversarial(const TrainedModel& model, const LabeledBatch& data, const AttackSpec& attack,
                            Index batch_size, std::uint64_t salt);

/// ASR after optional defense; SSIM against the clean images before defense.
EvaluationSummary summarize(const TrainedModel& model, const LabeledBatch& data, const Tensor& adversarial,
                            const std::optional<DefenseSpec>& defense, const SsimConfig& cfg = {});

EvaluationSummary evaluate_sequence(const TrainedModel& model, const LabeledBatch& data, const AttackSequence& seq,
                                    const std::optional<DefenseSpec>& defense = std::nullopt);

/// AFSQ1 sequence file.
std::string encode_sequence(const AttackSequence& seq);
AttackSequence decode_sequence(const std::string& bytes);
void save_sequence(const AttackSequence& seq, const std::filesystem::path& path);
AttackSequence load_sequence(const std::filesystem::path& path);

}  // namespace daash
