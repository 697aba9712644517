#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace facecorpus::lora {

// Plain row-major dense doubles; the kernel verifies the update rule,
// it does not train at scale.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LoraError : std::runtime_error {
  enum class Kind { kRankTooLarge, kShapeMismatch, kUnknownTag, kBadArgument };

  LoraError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind(kind) {}

  Kind kind;
};

struct BaseMatrix {
  Matrix weight;  // d x k

  Eigen::Index rows() const { return weight.rows(); }
  Eigen::Index cols() const { return weight.cols(); }
};

// The low-rank update pair. The update applied to the base weight is
// (alpha / r) * down * up; down is d x r, up is r x k.
struct LoraAdapter {
  Matrix down;  // d x r, Gaussian-initialized
  Matrix up;    // r x k, zero-initialized
  int rank = 0;
  double alpha = 0.0;

  double scale() const { return alpha / static_cast<double>(rank); }
};

// down ~ N(0, 0.02) i.i.d. from the seed, up = 0, so the initial update
// is exactly zero. Throws kRankTooLarge when r exceeds min(d, k).
LoraAdapter init_adapter(Eigen::Index d, Eigen::Index k, int rank, double alpha,
                         std::uint64_t seed);

// base.weight + (alpha / r) * down * up
Matrix effective_weight(const BaseMatrix& base, const LoraAdapter& adapter);

// Folds the update into a plain dense weight.
BaseMatrix merge(const BaseMatrix& base, const LoraAdapter& adapter);

struct ParamCounts {
  std::uint64_t lora;  // r * (d + k)
  std::uint64_t full;  // d * k
};

ParamCounts trainable_param_count(Eigen::Index d, Eigen::Index k, int rank);

using LossFn = std::function<double(const Matrix&)>;
using LossGradFn = std::function<Matrix(const Matrix&)>;  // returns dLoss/dW~, d x k

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Compares the chain-rule gradients through the low-rank update,
//   dLoss/d(down) = scale * G * up^T,   dLoss/d(up) = scale * down^T * G,
// with G supplied by loss_grad, against central finite differences of
// loss(effective_weight(...)) over every adapter entry.
GradCheckResult grad_check(const BaseMatrix& base, const LoraAdapter& adapter,
                           const LossFn& loss, const LossGradFn& loss_grad,
                           double epsilon = 1e-6);

struct TrainConfig {
  std::string base_model_tag;     // "1B", "8B" or "38B"
  std::string base_model;         // e.g. "InternVL3-8B"
  std::string vision_encoder_model;
  std::string language_model;
  double learning_rate = 1e-5;
  int epochs = 1;
  int lora_r = 8;
  int lora_alpha = 16;
  std::string target = "language-decoder attention and feedforward";
  std::string vision_encoder = "frozen";

  bool operator==(const TrainConfig&) const = default;
};

// Defaults for a model size tag. Throws kUnknownTag.
TrainConfig make_train_config(const std::string& base_model_tag);

// "key = value" lines, fixed key order, byte-stable.
std::string serialize_train_config(const TrainConfig& config);

// Convenience: make + serialize + write to path.
TrainConfig emit_train_config(const std::string& base_model_tag, const std::string& path);

}  // namespace facecorpus::lora
