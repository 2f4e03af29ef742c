#include "gibbsnet/model.hpp"

#include <cmath>
#include <sstream>

#include "gibbsnet/errors.hpp"

namespace gibbsnet {

Activation parse_activation(const std::string& name) {
  if (name == "linear") return Activation::linear;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + name + "' (expected linear or sigmoid)");
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "mse" || name == "mean_squared_error") return LossKind::mean_squared_error;
  if (name == "softmax_cross_entropy" || name == "cross_entropy")
    return LossKind::softmax_cross_entropy;
  throw ConfigError("unknown loss '" + name + "' (expected mse or softmax_cross_entropy)");
}

std::string to_string(Activation a) { return a == Activation::linear ? "linear" : "sigmoid"; }

std::string to_string(LossKind k) {
  return k == LossKind::mean_squared_error ? "mse" : "softmax_cross_entropy";
}

Eigen::Index Architecture::param_count() const {
  Eigen::Index n = 0;
  for (int l = 0; l < layer_count(); ++l)
    n += static_cast<Eigen::Index>(layer_sizes[l]) * layer_sizes[l + 1] + layer_sizes[l + 1];
  return n;
}

Eigen::Index Architecture::weight_offset(int l) const {
  Eigen::Index off = 0;
  for (int k = 0; k < l; ++k)
    off += static_cast<Eigen::Index>(layer_sizes[k]) * layer_sizes[k + 1] + layer_sizes[k + 1];
  return off;
}

Eigen::Index Architecture::bias_offset(int l) const {
  return weight_offset(l) + static_cast<Eigen::Index>(layer_sizes[l]) * layer_sizes[l + 1];
}

void Architecture::validate() const {
  if (layer_sizes.size() < 2)
    throw ConfigError("architecture needs at least an input and an output layer");
  for (int s : layer_sizes)
    if (s <= 0) throw ConfigError("layer sizes must be positive");
  if (loss == LossKind::softmax_cross_entropy && output_dim() < 2)
    throw ConfigError("softmax cross-entropy needs at least 2 outputs");
}

LayerParams unflatten(const Architecture& arch, const Vector& params) {
  if (params.size() != arch.param_count()) {
    std::ostringstream os;
    os << "parameter vector has length " << params.size() << ", architecture expects "
       << arch.param_count();
    throw ConfigError(os.str());
  }
  LayerParams out;
  for (int l = 0; l < arch.layer_count(); ++l) {
    const int n_in = arch.layer_sizes[l], n_out = arch.layer_sizes[l + 1];
    out.weights.emplace_back(
        Eigen::Map<const RowMatrix>(params.data() + arch.weight_offset(l), n_out, n_in));
    out.biases.emplace_back(params.segment(arch.bias_offset(l), n_out));
  }
  return out;
}

Vector flatten(const Architecture& arch, const LayerParams& layers) {
  Vector params(arch.param_count());
  for (int l = 0; l < arch.layer_count(); ++l) {
    const int n_in = arch.layer_sizes[l], n_out = arch.layer_sizes[l + 1];
    Eigen::Map<RowMatrix>(params.data() + arch.weight_offset(l), n_out, n_in) = layers.weights[l];
    params.segment(arch.bias_offset(l), n_out) = layers.biases[l];
  }
  return params;
}

namespace {

void check_params(const Architecture& arch, const Vector& params) {
  if (params.size() != arch.param_count()) {
    std::ostringstream os;
    os << "parameter vector has length " << params.size() << ", architecture expects "
       << arch.param_count();
    throw ConfigError(os.str());
  }
}

void check_batch(const Architecture& arch, Eigen::Index in_cols, Eigen::Index label_cols,
                 Eigen::Index in_rows, Eigen::Index label_rows) {
  if (in_rows == 0) throw ConfigError("empty batch");
  if (in_rows == label_rows && in_cols == arch.input_dim() && label_cols == arch.output_dim())
    return;
  std::ostringstream os;
  if (in_rows != label_rows)
    os << "batch has " << in_rows << " inputs but " << label_rows << " labels";
  else if (in_cols != arch.input_dim())
    os << "input dimension " << in_cols << ", expected " << arch.input_dim();
  else
    os << "label dimension " << label_cols << ", expected " << arch.output_dim();
  throw ConfigError(os.str());
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Vector forward(const Architecture& arch, const Vector& params, const Vector& input) {
  check_params(arch, params);
  if (input.size() != arch.input_dim()) {
    std::ostringstream os;
    os << "input has dimension " << input.size() << ", expected " << arch.input_dim();
    throw ConfigError(os.str());
  }
  Vector a = input;
  for (int l = 0; l < arch.layer_count(); ++l) {
    const int n_in = arch.layer_sizes[l], n_out = arch.layer_sizes[l + 1];
    Eigen::Map<const RowMatrix> w(params.data() + arch.weight_offset(l), n_out, n_in);
    Vector z = w * a + params.segment(arch.bias_offset(l), n_out);
    if (l + 1 < arch.layer_count() && arch.hidden_activation == Activation::sigmoid)
      z = z.unaryExpr([](double v) { return sigmoid(v); });
    a = std::move(z);
  }
  return a;
}

double softmax_cross_entropy(const Eigen::Ref<const Vector>& logits,
                             const Eigen::Ref<const Vector>& one_hot_label) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return -(one_hot_label.array() * (logits.array() - lse)).sum();
}

void require_one_hot(const Matrix& labels) {
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    int ones = 0;
    for (Eigen::Index k = 0; k < labels.cols(); ++k) {
      const double v = labels(i, k);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        std::ostringstream os;
        os << "label row " << i << " is not one-hot (entry " << k << " = " << v << ")";
        throw ConfigError(os.str());
      }
    }
    if (ones != 1) {
      std::ostringstream os;
      os << "label row " << i << " has " << ones << " nonzero entries, expected exactly one";
      throw ConfigError(os.str());
    }
  }
}

Workspace::Workspace(const Architecture& arch) : arch_(arch) {
  arch_.validate();
  act_.resize(arch_.layer_sizes.size());
}

void Workspace::run_forward(const Vector& params, const Eigen::Ref<const Matrix>& inputs) {
  const int layers = arch_.layer_count();
  for (int l = 0; l < layers; ++l) {
    const int n_in = arch_.layer_sizes[l], n_out = arch_.layer_sizes[l + 1];
    Eigen::Map<const RowMatrix> w(params.data() + arch_.weight_offset(l), n_out, n_in);
    const auto b = params.segment(arch_.bias_offset(l), n_out);
    Matrix& z = act_[l + 1];
    z.resize(inputs.rows(), n_out);
    if (l == 0)
      z.noalias() = inputs * w.transpose();
    else
      z.noalias() = act_[l] * w.transpose();
    z.rowwise() += b.transpose();
    if (l + 1 < layers && arch_.hidden_activation == Activation::sigmoid)
      z = z.unaryExpr([](double v) { return sigmoid(v); });
  }
}

double Workspace::output_loss(const Eigen::Ref<const Matrix>& labels, bool want_delta) {
  const Matrix& out = act_.back();
  if (arch_.loss == LossKind::mean_squared_error) {
    if (want_delta) {
      delta_.resize(out.rows(), out.cols());
      delta_ = out - labels;
      const double loss = delta_.squaredNorm();
      delta_ *= 2.0;
      return loss;
    }
    return (out - labels).squaredNorm();
  }
  if (want_delta) delta_.resize(out.rows(), out.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto z = out.row(i);
    const double m = z.maxCoeff();
    const double s = (z.array() - m).exp().sum();
    const double lse = m + std::log(s);
    loss -= (labels.row(i).array() * (z.array() - lse)).sum();
    if (want_delta)
      delta_.row(i) = (z.array() - lse).exp().matrix() * labels.row(i).sum() - labels.row(i);
  }
  return loss;
}

double Workspace::loss(const Vector& params, const Eigen::Ref<const Matrix>& inputs,
                       const Eigen::Ref<const Matrix>& labels) {
  check_params(arch_, params);
  check_batch(arch_, inputs.cols(), labels.cols(), inputs.rows(), labels.rows());
  run_forward(params, inputs);
  return output_loss(labels, false);
}

double Workspace::loss_and_gradient(const Vector& params, const Eigen::Ref<const Matrix>& inputs,
                                    const Eigen::Ref<const Matrix>& labels, Vector& grad) {
  check_params(arch_, params);
  check_batch(arch_, inputs.cols(), labels.cols(), inputs.rows(), labels.rows());
  run_forward(params, inputs);
  const double loss = output_loss(labels, true);

  grad.resize(params.size());
  for (int l = arch_.layer_count() - 1; l >= 0; --l) {
    const int n_in = arch_.layer_sizes[l], n_out = arch_.layer_sizes[l + 1];
    Eigen::Map<RowMatrix> gw(grad.data() + arch_.weight_offset(l), n_out, n_in);
    if (l == 0)
      gw.noalias() = delta_.transpose() * inputs;
    else
      gw.noalias() = delta_.transpose() * act_[l];
    grad.segment(arch_.bias_offset(l), n_out) = delta_.colwise().sum().transpose();
    if (l == 0) break;

    Eigen::Map<const RowMatrix> w(params.data() + arch_.weight_offset(l), n_out, n_in);
    delta_prev_.resize(delta_.rows(), n_in);
    delta_prev_.noalias() = delta_ * w;
    if (arch_.hidden_activation == Activation::sigmoid)
      delta_prev_.array() *= act_[l].array() * (1.0 - act_[l].array());
    delta_.swap(delta_prev_);
  }
  return loss;
}

LossGrad loss_and_gradient(const Architecture& arch, const Vector& params, const Matrix& inputs,
                           const Matrix& labels) {
  if (arch.loss == LossKind::softmax_cross_entropy) require_one_hot(labels);
  Workspace ws(arch);
  LossGrad out;
  out.loss = ws.loss_and_gradient(params, inputs, labels, out.grad);
  return out;
}

}  // namespace gibbsnet
