#include "facecorpus/lora.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace facecorpus::lora {

namespace {

void require_shapes(const BaseMatrix& base, const LoraAdapter& adapter) {
  if (adapter.rank <= 0) {
    throw LoraError(LoraError::Kind::kBadArgument, "adapter rank must be positive");
  }
  if (adapter.down.rows() != base.rows() || adapter.down.cols() != adapter.rank ||
      adapter.up.rows() != adapter.rank || adapter.up.cols() != base.cols()) {
    throw LoraError(LoraError::Kind::kShapeMismatch,
                    "adapter shapes do not conform to the base matrix");
  }
}

std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", value);
  return std::string(buf);
}

}  // namespace

LoraAdapter init_adapter(Eigen::Index d, Eigen::Index k, int rank, double alpha,
                         std::uint64_t seed) {
  if (d <= 0 || k <= 0) {
    throw LoraError(LoraError::Kind::kBadArgument, "matrix dimensions must be positive");
  }
  if (rank <= 0) {
    throw LoraError(LoraError::Kind::kBadArgument, "rank must be positive");
  }
  if (alpha <= 0.0) {
    throw LoraError(LoraError::Kind::kBadArgument, "alpha must be positive");
  }
  if (rank > std::min(d, k)) {
    throw LoraError(LoraError::Kind::kRankTooLarge,
                    "rank " + std::to_string(rank) + " exceeds min(d, k) = " +
                        std::to_string(std::min(d, k)));
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gaussian(0.0, 0.02);

  LoraAdapter adapter;
  adapter.rank = rank;
  adapter.alpha = alpha;
  adapter.down.resize(d, rank);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < rank; ++j) {
      adapter.down(i, j) = gaussian(rng);
    }
  }
  adapter.up = Matrix::Zero(rank, k);
  return adapter;
}

Matrix effective_weight(const BaseMatrix& base, const LoraAdapter& adapter) {
  require_shapes(base, adapter);
  return base.weight + adapter.scale() * (adapter.down * adapter.up);
}

BaseMatrix merge(const BaseMatrix& base, const LoraAdapter& adapter) {
  return BaseMatrix{effective_weight(base, adapter)};
}

ParamCounts trainable_param_count(Eigen::Index d, Eigen::Index k, int rank) {
  if (d <= 0 || k <= 0 || rank <= 0) {
    throw LoraError(LoraError::Kind::kBadArgument,
                    "trainable_param_count requires positive d, k, rank");
  }
  ParamCounts counts;
  counts.lora = static_cast<std::uint64_t>(rank) *
                (static_cast<std::uint64_t>(d) + static_cast<std::uint64_t>(k));
  counts.full = static_cast<std::uint64_t>(d) * static_cast<std::uint64_t>(k);
  return counts;
}

GradCheckResult grad_check(const BaseMatrix& base, const LoraAdapter& adapter,
                           const LossFn& loss, const LossGradFn& loss_grad,
                           double epsilon) {
  require_shapes(base, adapter);
  const Matrix effective = effective_weight(base, adapter);
  const Matrix grad_effective = loss_grad(effective);
  if (grad_effective.rows() != base.rows() || grad_effective.cols() != base.cols()) {
    throw LoraError(LoraError::Kind::kShapeMismatch,
                    "loss gradient shape does not match the base matrix");
  }
  const double scale = adapter.scale();
  const Matrix grad_down = scale * (grad_effective * adapter.up.transpose());
  const Matrix grad_up = scale * (adapter.down.transpose() * grad_effective);

  GradCheckResult result;
  // relative error guarded at 1 so near-zero gradients compare absolutely
  auto record = [&result](double analytic, double numeric) {
    const double abs_err = std::abs(analytic - numeric);
    const double rel_err =
        abs_err / std::max({std::abs(analytic), std::abs(numeric), 1.0});
    result.max_abs_error = std::max(result.max_abs_error, abs_err);
    result.max_rel_error = std::max(result.max_rel_error, rel_err);
  };

  LoraAdapter probe = adapter;
  auto central_difference = [&](Matrix& entry_owner, Eigen::Index i, Eigen::Index j) {
    const double saved = entry_owner(i, j);
    entry_owner(i, j) = saved + epsilon;
    const double plus = loss(effective_weight(base, probe));
    entry_owner(i, j) = saved - epsilon;
    const double minus = loss(effective_weight(base, probe));
    entry_owner(i, j) = saved;
    return (plus - minus) / (2.0 * epsilon);
  };

  for (Eigen::Index i = 0; i < probe.down.rows(); ++i) {
    for (Eigen::Index j = 0; j < probe.down.cols(); ++j) {
      record(grad_down(i, j), central_difference(probe.down, i, j));
    }
  }
  for (Eigen::Index i = 0; i < probe.up.rows(); ++i) {
    for (Eigen::Index j = 0; j < probe.up.cols(); ++j) {
      record(grad_up(i, j), central_difference(probe.up, i, j));
    }
  }
  return result;
}

TrainConfig make_train_config(const std::string& base_model_tag) {
  TrainConfig config;
  config.base_model_tag = base_model_tag;
  if (base_model_tag == "1B") {
    config.base_model = "InternVL3-1B";
    config.vision_encoder_model = "InternViT-300M-448px-V2.5";
    config.language_model = "Qwen2.5-0.5B";
  } else if (base_model_tag == "8B") {
    config.base_model = "InternVL3-8B";
    config.vision_encoder_model = "InternViT-300M-448px-V2.5";
    config.language_model = "Qwen2.5-7B";
  } else if (base_model_tag == "38B") {
    config.base_model = "InternVL3-38B";
    config.vision_encoder_model = "InternViT-6B-448px-V2.5";
    config.language_model = "Qwen2.5-32B";
  } else {
    throw LoraError(LoraError::Kind::kUnknownTag,
                    "unknown base model tag '" + base_model_tag + "' (use 1B, 8B or 38B)");
  }
  return config;
}

std::string serialize_train_config(const TrainConfig& config) {
  std::string out;
  auto line = [&out](std::string_view key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  };
  line("base_model_tag", config.base_model_tag);
  line("base_model", config.base_model);
  line("vision_encoder_model", config.vision_encoder_model);
  line("language_model", config.language_model);
  line("learning_rate", format_double(config.learning_rate));
  line("epochs", std::to_string(config.epochs));
  line("lora_r", std::to_string(config.lora_r));
  line("lora_alpha", std::to_string(config.lora_alpha));
  line("target", config.target);
  line("vision_encoder", config.vision_encoder);
  return out;
}

TrainConfig emit_train_config(const std::string& base_model_tag, const std::string& path) {
  const TrainConfig config = make_train_config(base_model_tag);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw LoraError(LoraError::Kind::kBadArgument, "cannot open config path: " + path);
  }
  out << serialize_train_config(config);
  return config;
}

}  // namespace facecorpus::lora
