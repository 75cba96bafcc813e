#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nightiq/bilinear.hpp"
#include "nightiq/checkpoint.hpp"
#include "nightiq/decomposition.hpp"
#include "nightiq/eai.hpp"
#include "nightiq/feature.hpp"
#include "nightiq/image.hpp"
#include "nightiq/manifest.hpp"
#include "nightiq/nn.hpp"

namespace nightiq {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lambda1 = 0.1;  // decomposition
  double lambda2 = 0.2;  // feature self-reconstruction
  double lambda3 = 0.7;  // quality regression
  int batch_size = 16;
  int epochs = 100;
  double learning_rate = 3e-5;
  ImageSize input_size{512, 512};
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double penalty_c = 0.1;
  std::string eai_dir;  // empty: EAIs live next to their images

  void validate() const;
  /// Applies one `key = value` assignment; unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);
  /// Canonical `key = value` text, one field per line, stable order.
  [[nodiscard]] std::string to_text() const;
  /// Parses `key = value` lines on top of `base`; '#' starts a comment.
  static TrainConfig from_text(const std::string& text, TrainConfig base);
  static TrainConfig from_text(const std::string& text);
};

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});

/// The whole three-stage network with its parameters.
class QualityModel {
 public:
  explicit QualityModel(std::uint64_t seed);
  QualityModel(const QualityModel&) = delete;
  QualityModel& operator=(const QualityModel&) = delete;

  struct Forward {
    DecompositionVars night;
    FeaturePyramid reflectance_features;
    FeaturePyramid illumination_features;
    ag::Var reflectance_reconstruction;
    ag::Var illumination_reconstruction;
    HeadOutput head;
  };

  /// Decomposition -> both encoders (-> decoders when `reconstruct`) -> head.
  [[nodiscard]] Forward forward(const ag::Var& night, ag::NormMode mode, bool reconstruct) const;
  /// Same, starting from an already computed decomposition.
  [[nodiscard]] Forward forward(DecompositionVars night, ag::NormMode mode, bool reconstruct) const;

  ParameterStore& store() { return store_; }
  [[nodiscard]] const ParameterStore& store() const { return store_; }
  [[nodiscard]] const DecompositionNet& decomposition() const { return decomposition_; }
  [[nodiscard]] const FeatureEncoder& reflectance_encoder() const { return encoder_r_; }
  [[nodiscard]] const FeatureEncoder& illumination_encoder() const { return encoder_l_; }
  [[nodiscard]] const FeatureDecoder& reflectance_decoder() const { return decoder_r_; }
  [[nodiscard]] const FeatureDecoder& illumination_decoder() const { return decoder_l_; }
  [[nodiscard]] const BilinearHead& head() const { return head_; }

 private:
  QualityModel(std::uint64_t seed, Rng rng);

  ParameterStore store_;
  DecompositionNet decomposition_;
  FeatureEncoder encoder_r_;
  FeatureEncoder encoder_l_;
  FeatureDecoder decoder_r_;
  FeatureDecoder decoder_l_;
  BilinearHead head_;
};

/// lambda1 * idm + lambda2 * feat + lambda3 * quality. Negative components throw.
double total_loss(double idm, double feat, double quality, const TrainConfig& config);

struct LossGraph {
  DecompositionLossTerms<ag::Var> idm;
  ag::Var feat;
  ag::Var quality;
  ag::Var total;
};

/// Builds the hybrid loss for one batch. night/exposed are (N,3,H,W), mos is (N,1,1,1).
LossGraph build_loss(const QualityModel& model, const ag::Var& night, const ag::Var& exposed,
                     const ag::Var& mos, const TrainConfig& config, ag::NormMode mode);

struct EpochLog {
  int epoch = 0;  // 1-based
  double idm = 0, feat = 0, quality = 0, total = 0;
};

struct TrainResult {
  ModelCheckpoint checkpoint;  // best (lowest mean training loss) epoch
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

struct TrainHooks {
  /// Called after every optimization step with the step's losses (1-based step).
  std::function<void(int step, const EpochLog& losses)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Joint optimization over `records` with Adam. Every record needs a cached EAI.
TrainResult train(const std::vector<SampleRecord>& records, const TrainConfig& config,
                  const TrainHooks& hooks = {});

void write_loss_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

/// Inference wrapper around a checkpoint. Uses running statistics and never
/// touches the EAI stream.
class Predictor {
 public:
  explicit Predictor(const ModelCheckpoint& checkpoint);

  [[nodiscard]] double predict(const ImageTensor& image) const;
  [[nodiscard]] double predict(const std::filesystem::path& image_path) const;
  [[nodiscard]] DecompositionOutput decompose(const ImageTensor& image) const;

  [[nodiscard]] const TrainConfig& config() const { return config_; }
  [[nodiscard]] const QualityModel& model() const { return *model_; }
  /// Resizes to the model's input size when needed.
  [[nodiscard]] ImageTensor prepare(const ImageTensor& image) const;

 private:
  TrainConfig config_;
  std::unique_ptr<QualityModel> model_;
};

double predict(const ModelCheckpoint& checkpoint, const std::filesystem::path& image_path);

ModelCheckpoint make_checkpoint(const QualityModel& model, const TrainConfig& config);

struct GradcheckReport {
  std::string component;
  double max_relative_error = 0.0;
  int coordinates_checked = 0;
  int coordinates_skipped = 0;  // the +-step probes straddled a kink
  std::string worst_parameter;
  double step = 1e-4;
};

/// Central finite differences (step 1e-4, float64, 16x16 inputs, batch of 2) against
/// backprop for one of: decomposition, feature, head, total. Relative error per
/// coordinate is |a - n| / max(|a|, |n|, 1e-6). Coordinates whose probes land
/// on a different side of any relu/abs/clamp/sign kink than the base point are
/// skipped and counted, since the difference quotient is not a derivative there.
GradcheckReport gradcheck(const std::string& component, std::uint64_t seed,
                          int coordinates_per_tensor = 3);

}  // namespace nightiq
