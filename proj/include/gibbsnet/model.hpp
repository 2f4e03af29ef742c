#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gibbsnet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { linear, sigmoid };
enum class LossKind { mean_squared_error, softmax_cross_entropy };

Activation parse_activation(const std::string& name);
LossKind parse_loss_kind(const std::string& name);
std::string to_string(Activation a);
std::string to_string(LossKind k);

/// Feed-forward network layout. The output layer is always linear; the
/// loss decides how the outputs are read.
///
/// Parameters are one flat vector. For each consecutive layer pair the
/// weight matrix (n_out x n_in) is stored row-major, followed by the n_out
/// biases.
struct Architecture {
  std::vector<int> layer_sizes;
  Activation hidden_activation = Activation::linear;
  LossKind loss = LossKind::mean_squared_error;

  Eigen::Index param_count() const;
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int layer_count() const { return static_cast<int>(layer_sizes.size()) - 1; }
  /// Offset of layer l's weight block inside the flat parameter vector.
  Eigen::Index weight_offset(int l) const;
  Eigen::Index bias_offset(int l) const;
  /// Throws ConfigError when the layout is unusable.
  void validate() const;
};

/// Per-layer weight matrices and bias vectors, the unflattened view of a
/// parameter vector.
struct LayerParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

LayerParams unflatten(const Architecture& arch, const Vector& params);
Vector flatten(const Architecture& arch, const LayerParams& layers);

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

/// Network output for a single input vector.
Vector forward(const Architecture& arch, const Vector& params, const Vector& input);

/// -sum_i y_i log softmax(logits)_i using a shifted log-sum-exp.
double softmax_cross_entropy(const Eigen::Ref<const Vector>& logits,
                             const Eigen::Ref<const Vector>& one_hot_label);

/// Throws ConfigError unless every row of `labels` is one-hot.
void require_one_hot(const Matrix& labels);

/// Reusable buffers for batched forward/backward passes. One per walker;
/// evaluation through a workspace does not allocate once the batch size
/// has been seen.
class Workspace {
 public:
  explicit Workspace(const Architecture& arch);

  /// Loss summed over the rows of (inputs, labels), and its exact
  /// gradient written to `grad` (resized if needed).
  double loss_and_gradient(const Vector& params, const Eigen::Ref<const Matrix>& inputs,
                           const Eigen::Ref<const Matrix>& labels, Vector& grad);
  double loss(const Vector& params, const Eigen::Ref<const Matrix>& inputs,
              const Eigen::Ref<const Matrix>& labels);

  const Architecture& architecture() const { return arch_; }

 private:
  void run_forward(const Vector& params, const Eigen::Ref<const Matrix>& inputs);
  double output_loss(const Eigen::Ref<const Matrix>& labels, bool want_delta);

  Architecture arch_;
  std::vector<Matrix> act_;  // act_[0] = inputs, act_[l+1] = output of layer l (rows = items)
  Matrix delta_;
  Matrix delta_prev_;
};

/// Loss summed over all items of the batch; convenience wrapper that
/// validates labels and builds a temporary workspace.
LossGrad loss_and_gradient(const Architecture& arch, const Vector& params,
                           const Matrix& inputs, const Matrix& labels);

}  // namespace gibbsnet
