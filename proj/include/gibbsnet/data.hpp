#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gibbsnet/model.hpp"
#include "gibbsnet/rng.hpp"

namespace gibbsnet {

/// Items are rows: inputs is M x d, labels is M x c.
struct Dataset {
  Matrix inputs;
  Matrix labels;

  Eigen::Index size() const { return inputs.rows(); }
  Eigen::Index input_dim() const { return inputs.cols(); }
  Eigen::Index label_dim() const { return labels.cols(); }
  /// Throws ConfigError on shape mismatch or non-finite entries.
  void validate() const;
  Dataset subset(const std::vector<Eigen::Index>& rows) const;
};

/// One item (sqrt(a), 0).
Dataset make_harmonic(double a);

struct TwoClusterOptions {
  double spread = 1.0;          // std of the Gaussian around each center
  double relative_noise = 0.1;  // x <- x * (1 + relative_noise * g), per coordinate
};

/// Half the points around (2,2) with label +1, half around (-2,-2) with
/// label -1, interleaved (+1 first).
Dataset make_two_clusters(int n_points, std::uint64_t seed, const TwoClusterOptions& opt = {});

struct GaussianModel {
  Dataset data;         // item i is sqrt(lambda_i) * v_i, label 0
  Vector eigenvalues;   // ascending, equidistant on [lo, hi]
  Matrix eigenvectors;  // column i pairs with eigenvalues(i)
  /// sum_i x_i x_i^T, so that L(w) = w^T C w.
  Matrix curvature() const;
};

GaussianModel make_gaussian_model(int n, double eig_lo, double eig_hi, std::uint64_t seed);

// ---- IDX files ----

struct IdxImages {
  std::uint32_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, item-major
};

IdxImages read_idx_images(const std::string& path);
std::vector<std::uint8_t> read_idx_labels(const std::string& path);
void write_idx_images(const std::string& path, const IdxImages& images);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

/// Pixels scaled to [0,1]. Labels one-hot over 10 digits, or over the two
/// filter digits (first digit -> class 0) when a filter is given; items of
/// other digits are dropped.
Dataset mnist_dataset(const IdxImages& images, const std::vector<std::uint8_t>& digits,
                      std::optional<std::pair<int, int>> two_class_filter = std::nullopt);

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       std::optional<std::pair<int, int>> two_class_filter = std::nullopt);

struct MnistSplit {
  Dataset train;       // training file items [0, 55000)
  Dataset validation;  // training file items [55000, 60000) then test file items [0, 5000)
  Dataset test;        // test file items [5000, 10000)
};

MnistSplit load_mnist_split(const std::string& dir,
                            std::optional<std::pair<int, int>> two_class_filter = std::nullopt);

/// Header x0..x{d-1},y0..y{c-1}; full double precision.
void write_dataset_csv(const std::string& path, const Dataset& data);

/// Epoch-shuffled index batches without replacement. A batch that would
/// straddle an epoch boundary is completed from the next permutation, so
/// every batch holds m distinct indices and each epoch covers all items
/// exactly once.
class MinibatchStream {
 public:
  MinibatchStream(Eigen::Index dataset_size, Eigen::Index batch_size, std::uint64_t seed,
                  std::uint64_t stream = 0);

  const std::vector<Eigen::Index>& next_batch();
  void set_batch_size(Eigen::Index m);
  Eigen::Index batch_size() const { return m_; }
  Eigen::Index dataset_size() const { return n_; }
  std::uint64_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  Eigen::Index n_;
  Eigen::Index m_;
  Rng rng_;
  std::vector<Eigen::Index> perm_;
  std::vector<Eigen::Index> batch_;
  Eigen::Index cursor_ = 0;
  std::uint64_t epoch_ = 0;
};

}  // namespace gibbsnet
