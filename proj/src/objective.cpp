#include "gibbsnet/objective.hpp"

#include "gibbsnet/errors.hpp"

namespace gibbsnet {

Reduction parse_reduction(const std::string& name) {
  if (name == "sum") return Reduction::sum;
  if (name == "mean") return Reduction::mean;
  throw ConfigError("unknown loss reduction '" + name + "' (expected sum or mean)");
}

ModelObjective::ModelObjective(Architecture arch, std::shared_ptr<const Dataset> data,
                               Reduction reduction, Eigen::Index batch_size, std::uint64_t seed,
                               std::uint64_t stream)
    : arch_(std::move(arch)),
      data_(std::move(data)),
      reduction_(reduction),
      seed_(seed),
      stream_id_(stream),
      ws_(arch_) {
  if (!data_) throw ConfigError("objective without dataset");
  data_->validate();
  if (data_->size() == 0) throw ConfigError("objective over an empty dataset");
  if (data_->input_dim() != arch_.input_dim() || data_->label_dim() != arch_.output_dim())
    throw ConfigError("dataset dimensions (" + std::to_string(data_->input_dim()) + " -> " +
                      std::to_string(data_->label_dim()) + ") do not match architecture (" +
                      std::to_string(arch_.input_dim()) + " -> " +
                      std::to_string(arch_.output_dim()) + ")");
  if (arch_.loss == LossKind::softmax_cross_entropy) require_one_hot(data_->labels);
  set_batch_size(batch_size);
}

std::unique_ptr<GradientSource> ModelObjective::clone(std::uint64_t stream) const {
  return std::make_unique<ModelObjective>(arch_, data_, reduction_, stream_ ? batch_size() : 0,
                                          seed_, stream);
}

void ModelObjective::set_batch_size(Eigen::Index m) {
  if (m == 0 || m == data_->size()) {
    stream_.reset();
    return;
  }
  if (stream_)
    stream_->set_batch_size(m);
  else
    stream_ = std::make_unique<MinibatchStream>(data_->size(), m, seed_, stream_id_);
}

double ModelObjective::scale() const {
  return reduction_ == Reduction::mean ? 1.0 / static_cast<double>(data_->size()) : 1.0;
}

double ModelObjective::full_loss(const Vector& theta) {
  return scale() * ws_.loss(theta, data_->inputs, data_->labels);
}

double ModelObjective::do_full_gradient(const Vector& theta, Vector& grad) {
  const double loss = ws_.loss_and_gradient(theta, data_->inputs, data_->labels, grad);
  const double s = scale();
  if (s != 1.0) grad *= s;
  return s * loss;
}

double ModelObjective::do_gradient(const Vector& theta, Vector& grad) {
  if (!stream_) return do_full_gradient(theta, grad);
  const auto& idx = stream_->next_batch();
  const Eigen::Index m = static_cast<Eigen::Index>(idx.size());
  batch_inputs_.resize(m, data_->input_dim());
  batch_labels_.resize(m, data_->label_dim());
  for (Eigen::Index r = 0; r < m; ++r) {
    batch_inputs_.row(r) = data_->inputs.row(idx[std::size_t(r)]);
    batch_labels_.row(r) = data_->labels.row(idx[std::size_t(r)]);
  }
  const double loss = ws_.loss_and_gradient(theta, batch_inputs_, batch_labels_, grad);
  const double s = scale() * static_cast<double>(data_->size()) / static_cast<double>(m);
  grad *= s;
  return s * loss;
}

QuadraticSource::QuadraticSource(Matrix a) : a_(std::move(a)) {
  if (a_.rows() != a_.cols()) throw ConfigError("quadratic form must be square");
}

std::unique_ptr<GradientSource> QuadraticSource::clone(std::uint64_t) const {
  return std::make_unique<QuadraticSource>(a_);
}

double QuadraticSource::full_loss(const Vector& theta) { return theta.dot(a_ * theta); }

double QuadraticSource::do_gradient(const Vector& theta, Vector& grad) {
  grad.noalias() = a_ * theta;
  const double loss = theta.dot(grad);
  grad *= 2.0;
  return loss;
}

FunctionSource::FunctionSource(Eigen::Index dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}

std::unique_ptr<GradientSource> FunctionSource::clone(std::uint64_t) const {
  return std::make_unique<FunctionSource>(dim_, fn_);
}

double FunctionSource::full_loss(const Vector& theta) { return fn_(theta, scratch_); }

}  // namespace gibbsnet
