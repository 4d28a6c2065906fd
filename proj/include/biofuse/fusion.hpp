#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "biofuse/batch_norm.hpp"
#include "biofuse/checkpoint.hpp"
#include "biofuse/ecg.hpp"
#include "biofuse/image.hpp"
#include "biofuse/image_extractor.hpp"
#include "biofuse/layers.hpp"
#include "biofuse/losses.hpp"
#include "biofuse/modality.hpp"
#include "biofuse/optimizer.hpp"

namespace biofuse {

enum class TaskMode { id_only, gender_only, multitask };
std::string_view to_string(TaskMode t) noexcept;
TaskMode parse_task_mode(std::string_view text);

struct MultimodalSample {
  std::optional<EcgSequence> ecg;
  std::optional<Image> face;
  std::optional<Image> finger;
  ModalityMask mask;
  std::size_t person_label = 0;
  int gender_label = 0;  // 0 = male, 1 = female
};

/// Throws ParameterError if a mask bit disagrees with the presence of its input.
void validate_sample(const MultimodalSample& s);

struct FusedModelConfig {
  std::size_t num_subjects = 2;
  std::size_t ecg_kernel = 7;
  ImageExtractorConfig image;  // shared by the face and finger extractors
  std::vector<std::size_t> trunk{256, 256};
  TaskMode task = TaskMode::multitask;
  ModalityMask modalities = ModalityMask::all();  // which inputs the model consumes
  std::uint64_t seed = 1;

  /// Fused width per modality; fixed by the ECG branch.
  static constexpr std::size_t feature_dim = kQrsLength;
};

struct ModelOutput {
  Tensor id_logits;      // [B, S]
  Tensor gender_logits;  // [B, 1]
};

class FusedModel {
 public:
  struct ModalityCache {
    std::vector<std::size_t> rows;  // batch rows where the modality is used
    Tensor ecg_input;               // [n, 3, 300]
    MaxPoolResult ecg_pool;
    ImageExtractor::Cache image;
    Tensor raw;   // [B, d], zero rows where absent
    Tensor unit;  // l2-normalized raw
    BatchNormCache bn;
    bool active = false;
  };
  struct Cache {
    std::size_t batch = 0;
    std::array<ModalityCache, kModalityCount> modality;
    Tensor fused;                     // [B, 3d]
    std::vector<Tensor> trunk_input;  // input of each trunk layer
    Tensor trunk_output;
  };

  FusedModel() = default;
  explicit FusedModel(const FusedModelConfig& cfg);

  const FusedModelConfig& config() const noexcept { return cfg_; }
  void set_mode(Mode m);
  Mode mode() const noexcept { return bn[0].mode; }

  /// Per-modality features after normalization and masked batch norm, [B, 3d].
  Tensor fuse(std::span<const MultimodalSample* const> batch, Cache* cache = nullptr);
  ModelOutput forward(std::span<const MultimodalSample* const> batch, Cache* cache = nullptr);
  /// Accumulates gradients; pass an empty tensor for a head whose loss is dropped.
  void backward(const Cache& cache, const Tensor& d_id, const Tensor& d_gender);

  std::vector<ParamView> parameters();
  void zero_grad();
  std::vector<NamedTensor> export_tensors() const;
  void import_tensors(const std::vector<NamedTensor>& tensors);

  /// Mask actually used for a sample: its own mask restricted to the model's modalities.
  ModalityMask effective_mask(const MultimodalSample& s) const noexcept { return s.mask & cfg_.modalities; }

  LayerParams ecg_conv;
  ImageExtractor face;
  ImageExtractor finger;
  std::array<BatchNormState, kModalityCount> bn;
  std::vector<LayerParams> trunk;
  LayerParams id_head;
  LayerParams gender_head;

 private:
  FusedModelConfig cfg_;
};

/// L2 normalization of one feature; a zero vector stays zero.
FeatureVector normalize_feature(const FeatureVector& f);

/// Stateless form of the fusion layer. features[m] holds one row per batch item
/// ([B, d]); rows where mask[b] lacks m are ignored and come out as zeros.
Tensor fuse_features(const std::array<std::optional<Tensor>, kModalityCount>& features,
                     std::span<const ModalityMask> mask, std::array<BatchNormState, kModalityCount>& bn);

// ---- training ----

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  AdamConfig adam;
  JointLossWeights loss_weights;
  // Stop as soon as the infer-mode training ID accuracy reaches this value.
  std::optional<double> target_train_accuracy;
  // Forward-only train-mode passes after the last update so the BN running stats
  // describe the final weights rather than a lagging average of earlier ones.
  std::size_t bn_refresh_passes = 2;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double id_loss = 0.0;
  double gender_loss = 0.0;
  double train_id_accuracy = 0.0;  // running, on train-mode minibatch outputs
  double train_gender_accuracy = 0.0;
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  bool reached_target = false;
};

TrainingLog train(FusedModel& model, std::span<const MultimodalSample> samples, const TrainConfig& cfg);

struct EvalResult {
  double id_accuracy = 0.0;
  double gender_accuracy = 0.0;
  std::size_t count = 0;
};

/// Infer-mode accuracy; the model's mode is restored afterwards.
EvalResult evaluate(FusedModel& model, std::span<const MultimodalSample> samples, std::size_t batch_size = 64);

struct Prediction {
  std::size_t person_id = 0;
  int gender = 0;
  std::vector<double> id_scores;  // softmax over subjects
  double female_probability = 0.0;
};

/// Single-sample inference with running statistics, using only the modalities in `mask`.
Prediction predict(FusedModel& model, const MultimodalSample& sample, ModalityMask mask = ModalityMask::all());

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

// ---- score-level fusion ----

enum class ScoreRule { sum, product, max };
std::string_view to_string(ScoreRule r) noexcept;
ScoreRule parse_score_rule(std::string_view text);

/// Elementwise combination of probability vectors, renormalized to sum 1.
/// An all-zero combination (product underflow) falls back to uniform.
std::vector<double> score_fusion(std::span<const std::vector<double>> scores, ScoreRule rule);

/// One single-modality model per modality, fused at the score level.
struct ScoreFusionEnsemble {
  std::vector<FusedModel> members;
};

ScoreFusionEnsemble train_score_ensemble(const FusedModelConfig& base, ModalityMask modalities,
                                         std::span<const MultimodalSample> samples, const TrainConfig& cfg);
EvalResult evaluate_score_ensemble(ScoreFusionEnsemble& ensemble, std::span<const MultimodalSample> samples,
                                   ScoreRule rule);

// ---- persistence: numcore checkpoint + JSON manifest ----

void save_model(const FusedModel& model, const std::filesystem::path& checkpoint,
                const std::filesystem::path& manifest);
FusedModel load_model(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest);

}  // namespace biofuse
