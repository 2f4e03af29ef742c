#pragma once

#include <cstdint>
#include <functional>
#include <memory>

#include "gibbsnet/data.hpp"
#include "gibbsnet/model.hpp"

namespace gibbsnet {

/// How per-item losses combine into the total loss.
enum class Reduction { sum, mean };

Reduction parse_reduction(const std::string& name);

/// Loss and gradient provider seen by the samplers. `gradient` is the
/// estimate that drives the dynamics (possibly a rescaled minibatch sum);
/// `full_gradient` and `full_loss` are always exact. Every call to
/// `gradient` or `full_gradient` increments the evaluation counter.
class GradientSource {
 public:
  virtual ~GradientSource() = default;

  virtual Eigen::Index dim() const = 0;
  /// True when `gradient` returns the exact full gradient.
  virtual bool exact() const = 0;
  /// Independent copy whose random batch selection uses `stream`.
  virtual std::unique_ptr<GradientSource> clone(std::uint64_t stream) const = 0;

  double gradient(const Vector& theta, Vector& grad) {
    ++evaluations_;
    return do_gradient(theta, grad);
  }
  double full_gradient(const Vector& theta, Vector& grad) {
    ++evaluations_;
    return do_full_gradient(theta, grad);
  }
  virtual double full_loss(const Vector& theta) = 0;

  std::uint64_t evaluations() const { return evaluations_; }
  void reset_evaluations() { evaluations_ = 0; }

 protected:
  virtual double do_gradient(const Vector& theta, Vector& grad) = 0;
  virtual double do_full_gradient(const Vector& theta, Vector& grad) = 0;

 private:
  std::uint64_t evaluations_ = 0;
};

/// Network loss over a dataset. With batch size m < M the stochastic
/// gradient is the minibatch sum times M/m (times 1/M under mean
/// reduction), drawn from an epoch-shuffled stream.
class ModelObjective final : public GradientSource {
 public:
  ModelObjective(Architecture arch, std::shared_ptr<const Dataset> data,
                 Reduction reduction = Reduction::sum, Eigen::Index batch_size = 0,
                 std::uint64_t seed = 0, std::uint64_t stream = 0);

  Eigen::Index dim() const override { return arch_.param_count(); }
  bool exact() const override { return !stream_; }
  std::unique_ptr<GradientSource> clone(std::uint64_t stream) const override;
  double full_loss(const Vector& theta) override;

  /// 0 or M selects full-batch gradients.
  void set_batch_size(Eigen::Index m);
  Eigen::Index batch_size() const { return stream_ ? stream_->batch_size() : data_->size(); }
  const Architecture& architecture() const { return arch_; }
  const Dataset& dataset() const { return *data_; }
  double scale() const;

 protected:
  double do_gradient(const Vector& theta, Vector& grad) override;
  double do_full_gradient(const Vector& theta, Vector& grad) override;

 private:
  Architecture arch_;
  std::shared_ptr<const Dataset> data_;
  Reduction reduction_;
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::unique_ptr<MinibatchStream> stream_;
  Workspace ws_;
  Matrix batch_inputs_, batch_labels_;
};

/// L(theta) = theta^T A theta with symmetric A; gradient 2 A theta.
class QuadraticSource final : public GradientSource {
 public:
  explicit QuadraticSource(Matrix a);
  Eigen::Index dim() const override { return a_.rows(); }
  bool exact() const override { return true; }
  std::unique_ptr<GradientSource> clone(std::uint64_t) const override;
  double full_loss(const Vector& theta) override;
  const Matrix& matrix() const { return a_; }

 protected:
  double do_gradient(const Vector& theta, Vector& grad) override;
  double do_full_gradient(const Vector& theta, Vector& grad) override { return do_gradient(theta, grad); }

 private:
  Matrix a_;
};

/// Arbitrary deterministic loss given as a callable returning the loss and
/// writing the gradient.
class FunctionSource final : public GradientSource {
 public:
  using Fn = std::function<double(const Vector&, Vector&)>;
  FunctionSource(Eigen::Index dim, Fn fn);
  Eigen::Index dim() const override { return dim_; }
  bool exact() const override { return true; }
  std::unique_ptr<GradientSource> clone(std::uint64_t) const override;
  double full_loss(const Vector& theta) override;

 protected:
  double do_gradient(const Vector& theta, Vector& grad) override { return fn_(theta, grad); }
  double do_full_gradient(const Vector& theta, Vector& grad) override { return fn_(theta, grad); }

 private:
  Eigen::Index dim_;
  Fn fn_;
  Vector scratch_;
};

}  // namespace gibbsnet
