#pragma once

#include "daash/autodiff.hpp"
#include "daash/labeled_batch.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace daash {

struct AttackSpec;

enum class Arch { Mlp, SmallCnn };

/// Architecture of a classifier.
///
/// small-cnn: conv(k) -> relu -> pool2 -> conv(k) -> relu -> pool2 -> dense -> relu -> dense.
/// mlp: flatten -> [dense -> relu]* -> dense.
struct ClassifierSpec {
  Arch arch = Arch::SmallCnn;
  Index channels = 3;
  Index height = 32;
  Index width = 32;
  int classes = 4;
  std::vector<Index> hidden{16};
  Index conv1 = 4;
  Index conv2 = 8;
  Index kernel = 3;

  Shape input_shape(Index batch) const { return {batch, channels, height, width}; }
  void validate() const;
  /// Expected shape of every named weight.
  std::map<std::string, Shape> weight_shapes() const;
};

std::string serialize(const ClassifierSpec& spec);
ClassifierSpec parse_classifier_spec(const std::string& text);

struct TrainConfig {
  int epochs = 10;
  double lr = 0.01;
  Index batch_size = 32;
  std::uint64_t seed = 0;
};

struct TrainingInfo {
  int epochs = 0;
  std::uint64_t seed = 0;
  bool adversarial = false;
  double clean_accuracy = 0.0;
};

struct TrainedModel {
  ClassifierSpec spec;
  std::map<std::string, Tensor> weights;
  TrainingInfo info;
};

/// He-uniform weights, zero biases.
TrainedModel init_model(const ClassifierSpec& spec, std::uint64_t seed);

/// Logits for `images` with the model weights recorded as constants.
Var forward(Graph& g, const TrainedModel& model, Var images);
/// Logits with caller-provided weight nodes (used for training).
Var forward(Graph& g, const ClassifierSpec& spec, const std::map<std::string, Var>& weights, Var images);

Tensor predict(const TrainedModel& model, const Tensor& images);
Tensor predict_probs(const TrainedModel& model, const Tensor& images);
std::vector<int> predict_labels(const TrainedModel& model, const Tensor& images);
double accuracy(const TrainedModel& model, const LabeledBatch& data);

/// Summed softmax cross-entropy.
Var cross_entropy_sum(Var logits, std::span<const int> labels);

struct InputGradient {
  double loss;
  Tensor grad;
};
/// Summed cross-entropy and its gradient with respect to the input pixels.
InputGradient loss_input_gradient(const TrainedModel& model, const Tensor& images, std::span<const int> labels);

TrainedModel train_classifier(const LabeledBatch& data, const ClassifierSpec& spec, const TrainConfig& cfg);
/// Each minibatch is replaced by its PGD perturbation before the update.
TrainedModel adversarial_train(const LabeledBatch& data, const ClassifierSpec& spec, const TrainConfig& cfg,
                               const AttackSpec& pgd);

/// AFRG1 weight file.
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);
std::string encode_model(const TrainedModel& model);
TrainedModel decode_model(const std::string& bytes);

}  // namespace daash
