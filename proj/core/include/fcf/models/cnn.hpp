#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fcf::models {

/// Dense (channels, height, width) sample, row-major.
struct CnnInput {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  double at(int c, int h, int w) const { return data[(static_cast<std::size_t>(c) * height + h) * width + w]; }
};

struct CnnConfig {
  std::array<int, 3> filters{32, 64, 128};
  std::array<int, 2> hidden{128, 64};
  double dropout = 0.3;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int patience = 40;
  int max_epochs = 300;
  double val_fraction = 0.2;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  std::uint64_t seed = 7;
};

struct Shape3 {
  int channels = 2, height = 49, width = 197;
  bool operator==(const Shape3&) const = default;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

/// Three conv blocks (3x3 same conv, batch norm, ReLU, 2x2 max-pool, dropout)
/// followed by dense layers hidden[0] (ReLU, dropout) and hidden[1] (ReLU) and
/// a scalar output.
class CnnModel;

CnnModel train_cnn(const std::vector<CnnInput>& samples, const std::vector<double>& labels,
                   const CnnConfig& config = {}, const std::vector<std::string>* groups = nullptr);

class CnnModel {
 public:
  CnnModel() = default;
  CnnModel(Shape3 input, const CnnConfig& config);

  const Shape3& input_shape() const { return input_; }
  const CnnConfig& config() const { return config_; }
  bool trained() const { return !params_.empty(); }

  /// Inference (dropout off, running batch-norm statistics).
  double predict_raw(const CnnInput& x) const;
  std::vector<double> predict_batch(const std::vector<const CnnInput*>& batch) const;

  /// Mean squared error over the batch and its gradient, accumulated into the
  /// parameter gradients. In training mode batch norm uses batch statistics
  /// and updates the running ones; dropout follows `use_dropout`.
  double loss_and_gradient(const std::vector<const CnnInput*>& batch, const std::vector<double>& targets,
                           bool use_dropout, std::uint64_t dropout_seed);

  /// Flat views over every trainable parameter, in a fixed order.
  std::size_t parameter_count() const;
  double& parameter(std::size_t i);
  double gradient(std::size_t i) const;
  void zero_gradients();

  /// Zeros every weight and bias except the output bias.
  void zero_all_but_output_bias(double bias);

  void adam_step(double lr, int step);

  /// Arithmetic of the forward and backward passes. Parameters, gradients and
  /// optimizer state are always double; the setting is not saved.
  enum class Precision { Single, Double };
  void set_precision(Precision p) { precision_ = p; }
  Precision precision() const { return precision_; }

  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::uint64_t train_seed = 0;

  void save(const std::filesystem::path& path) const;
  static CnnModel load(const std::filesystem::path& path);

  struct Param {
    std::string name;
    std::vector<double> value, grad, m, v;
  };
  struct BnStats {
    std::vector<double> mean, var;
  };

 private:
  friend CnnModel train_cnn(const std::vector<CnnInput>&, const std::vector<double>&, const CnnConfig&,
                            const std::vector<std::string>*);
  struct Cache;
  template <class S>
  void forward(const std::vector<const CnnInput*>& batch, bool training, bool use_dropout, std::uint64_t dropout_seed,
               Cache& cache, std::vector<double>* outputs) const;
  template <class S>
  void backward(const std::vector<double>& dout, Cache& cache);
  void init_params();

  Shape3 input_;
  CnnConfig config_;
  std::vector<Param> params_;
  mutable std::array<BnStats, 3> bn_running_;
  Precision precision_ = Precision::Single;
  std::shared_ptr<Cache> workspace_;  // training buffers, reused across batches
};

/// Adam training on MSE with early stopping on a held-out split; the weights of
/// the best validation epoch are restored. `groups` (optional, one id per
/// sample) makes the validation split whole groups when at least two exist.
/// Throws TooFewSamples below 20 samples and ShapeMismatch on inconsistent dims.
CnnModel train_cnn(const std::vector<CnnInput>& samples, const std::vector<double>& labels,
                   const CnnConfig& config, const std::vector<std::string>* groups);

}  // namespace fcf::models
