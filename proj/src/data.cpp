#include "gibbsnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include <Eigen/Eigenvalues>

#include "gibbsnet/errors.hpp"

namespace gibbsnet {

void Dataset::validate() const {
  if (inputs.rows() != labels.rows()) {
    std::ostringstream os;
    os << "dataset has " << inputs.rows() << " inputs but " << labels.rows() << " labels";
    throw ConfigError(os.str());
  }
  if (!inputs.allFinite() || !labels.allFinite())
    throw ConfigError("dataset contains non-finite entries");
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& rows) const {
  return {inputs(rows, Eigen::all), labels(rows, Eigen::all)};
}

Dataset make_harmonic(double a) {
  if (!(a > 0.0)) throw ConfigError("harmonic prefactor a must be positive");
  Dataset d;
  d.inputs = Matrix::Constant(1, 1, std::sqrt(a));
  d.labels = Matrix::Zero(1, 1);
  return d;
}

Dataset make_two_clusters(int n_points, std::uint64_t seed, const TwoClusterOptions& opt) {
  if (n_points <= 0 || n_points % 2 != 0)
    throw ConfigError("two-cluster dataset needs a positive even number of points");
  Rng rng(seed);
  Dataset d;
  d.inputs.resize(n_points, 2);
  d.labels.resize(n_points, 1);
  for (int i = 0; i < n_points; ++i) {
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;
    for (int k = 0; k < 2; ++k) {
      double x = 2.0 * sign + opt.spread * rng.normal();
      x *= 1.0 + opt.relative_noise * rng.normal();
      d.inputs(i, k) = x;
    }
    d.labels(i, 0) = sign;
  }
  return d;
}

Matrix GaussianModel::curvature() const { return data.inputs.transpose() * data.inputs; }

GaussianModel make_gaussian_model(int n, double eig_lo, double eig_hi, std::uint64_t seed) {
  if (n < 2) throw ConfigError("Gaussian model needs dimension >= 2");
  if (!(eig_lo > 0.0 && eig_lo < eig_hi))
    throw ConfigError("Gaussian model needs 0 < eig_lo < eig_hi");
  Rng rng(seed);
  Matrix g(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) g(i, j) = rng.normal();
  const Matrix sym = 0.5 * (g + g.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw AnalysisError("eigendecomposition of random matrix failed");

  GaussianModel gm;
  gm.eigenvectors = es.eigenvectors();
  gm.eigenvalues = Vector::LinSpaced(n, eig_lo, eig_hi);
  gm.data.inputs.resize(n, n);
  for (int i = 0; i < n; ++i)
    gm.data.inputs.row(i) = std::sqrt(gm.eigenvalues(i)) * gm.eigenvectors.col(i).transpose();
  gm.data.labels = Matrix::Zero(n, 1);
  return gm;
}

// ---- IDX ----

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset,
                        const std::string& path, const char* what) {
  if (offset + 4 > buf.size()) {
    std::ostringstream os;
    os << path << ": truncated at byte offset " << offset << " while reading " << what;
    throw ConfigError(os.str());
  }
  return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
         (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  os.write(b, 4);
}

void check_magic(std::uint32_t got, std::uint32_t want, const std::string& path) {
  if (got != want) {
    std::ostringstream os;
    os << path << ": bad magic number 0x" << std::hex << std::setw(8) << std::setfill('0') << got
       << " at byte offset 0 (expected 0x" << std::setw(8) << want << ")";
    throw ConfigError(os.str());
  }
}

}  // namespace

IdxImages read_idx_images(const std::string& path) {
  const auto buf = slurp(path);
  check_magic(read_be32(buf, 0, path, "magic number"), kImageMagic, path);
  IdxImages img;
  img.count = read_be32(buf, 4, path, "item count");
  img.rows = read_be32(buf, 8, path, "row count");
  img.cols = read_be32(buf, 12, path, "column count");
  const std::size_t need = std::size_t(img.count) * img.rows * img.cols;
  if (buf.size() < 16 + need) {
    std::ostringstream os;
    os << path << ": truncated pixel data, file ends at byte offset " << buf.size()
       << " but header requires " << 16 + need;
    throw ConfigError(os.str());
  }
  img.pixels.assign(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::string& path) {
  const auto buf = slurp(path);
  check_magic(read_be32(buf, 0, path, "magic number"), kLabelMagic, path);
  const std::uint32_t count = read_be32(buf, 4, path, "item count");
  if (buf.size() < 8 + std::size_t(count)) {
    std::ostringstream os;
    os << path << ": truncated label data, file ends at byte offset " << buf.size()
       << " but header requires " << 8 + std::size_t(count);
    throw ConfigError(os.str());
  }
  return {buf.begin() + 8, buf.begin() + 8 + count};
}

void write_idx_images(const std::string& path, const IdxImages& images) {
  if (images.pixels.size() != std::size_t(images.count) * images.rows * images.cols)
    throw ConfigError("IDX image buffer size does not match its header");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  put_be32(out, kImageMagic);
  put_be32(out, images.count);
  put_be32(out, images.rows);
  put_be32(out, images.cols);
  out.write(reinterpret_cast<const char*>(images.pixels.data()),
            static_cast<std::streamsize>(images.pixels.size()));
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  put_be32(out, kLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

Dataset mnist_dataset(const IdxImages& images, const std::vector<std::uint8_t>& digits,
                      std::optional<std::pair<int, int>> filter) {
  if (digits.size() != images.count) {
    std::ostringstream os;
    os << "image file holds " << images.count << " items but label file holds " << digits.size();
    throw ConfigError(os.str());
  }
  const std::size_t d = std::size_t(images.rows) * images.cols;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (digits[i] > 9) {
      std::ostringstream os;
      os << "label at byte offset " << 8 + i << " is " << int(digits[i]) << ", not a digit";
      throw ConfigError(os.str());
    }
    if (!filter || digits[i] == filter->first || digits[i] == filter->second) keep.push_back(i);
  }
  const int classes = filter ? 2 : 10;
  Dataset out;
  out.inputs.resize(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(d));
  out.labels = Matrix::Zero(static_cast<Eigen::Index>(keep.size()), classes);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const std::uint8_t* px = images.pixels.data() + keep[r] * d;
    for (std::size_t k = 0; k < d; ++k) out.inputs(Eigen::Index(r), Eigen::Index(k)) = px[k] / 255.0;
    const int digit = digits[keep[r]];
    const int cls = filter ? (digit == filter->first ? 0 : 1) : digit;
    out.labels(Eigen::Index(r), cls) = 1.0;
  }
  return out;
}

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       std::optional<std::pair<int, int>> filter) {
  return mnist_dataset(read_idx_images(images_path), read_idx_labels(labels_path), filter);
}

namespace {

IdxImages slice(const IdxImages& src, std::uint32_t begin, std::uint32_t end) {
  IdxImages out{end - begin, src.rows, src.cols, {}};
  const std::size_t d = std::size_t(src.rows) * src.cols;
  out.pixels.assign(src.pixels.begin() + static_cast<std::ptrdiff_t>(begin * d),
                    src.pixels.begin() + static_cast<std::ptrdiff_t>(end * d));
  return out;
}

std::vector<std::uint8_t> slice(const std::vector<std::uint8_t>& v, std::uint32_t begin,
                                std::uint32_t end) {
  return {v.begin() + begin, v.begin() + end};
}

}  // namespace

MnistSplit load_mnist_split(const std::string& dir, std::optional<std::pair<int, int>> filter) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const IdxImages train_img = read_idx_images((root / "train-images-idx3-ubyte").string());
  const auto train_lab = read_idx_labels((root / "train-labels-idx1-ubyte").string());
  const IdxImages test_img = read_idx_images((root / "t10k-images-idx3-ubyte").string());
  const auto test_lab = read_idx_labels((root / "t10k-labels-idx1-ubyte").string());
  if (train_img.count != 60000 || test_img.count != 10000)
    throw ConfigError("expected the standard 60000/10000 MNIST files in '" + dir + "'");

  MnistSplit s;
  s.train = mnist_dataset(slice(train_img, 0, 55000), slice(train_lab, 0, 55000), filter);
  Dataset v1 = mnist_dataset(slice(train_img, 55000, 60000), slice(train_lab, 55000, 60000), filter);
  Dataset v2 = mnist_dataset(slice(test_img, 0, 5000), slice(test_lab, 0, 5000), filter);
  s.validation.inputs.resize(v1.size() + v2.size(), v1.input_dim());
  s.validation.inputs << v1.inputs, v2.inputs;
  s.validation.labels.resize(v1.size() + v2.size(), v1.label_dim());
  s.validation.labels << v1.labels, v2.labels;
  s.test = mnist_dataset(slice(test_img, 5000, 10000), slice(test_lab, 5000, 10000), filter);
  return s;
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  for (Eigen::Index k = 0; k < data.input_dim(); ++k) out << (k ? "," : "") << 'x' << k;
  for (Eigen::Index k = 0; k < data.label_dim(); ++k) out << ",y" << k;
  out << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index k = 0; k < data.input_dim(); ++k) out << (k ? "," : "") << data.inputs(i, k);
    for (Eigen::Index k = 0; k < data.label_dim(); ++k) out << ',' << data.labels(i, k);
    out << '\n';
  }
}

// ---- minibatches ----

MinibatchStream::MinibatchStream(Eigen::Index dataset_size, Eigen::Index batch_size,
                                 std::uint64_t seed, std::uint64_t stream)
    : n_(dataset_size), m_(batch_size), rng_(seed, stream) {
  if (n_ <= 0) throw ConfigError("minibatch stream over an empty dataset");
  set_batch_size(batch_size);
  perm_.resize(static_cast<std::size_t>(n_));
  reshuffle();
}

void MinibatchStream::set_batch_size(Eigen::Index m) {
  if (m <= 0 || m > n_) {
    std::ostringstream os;
    os << "batch size " << m << " outside [1, " << n_ << "]";
    throw ConfigError(os.str());
  }
  m_ = m;
}

void MinibatchStream::reshuffle() {
  for (Eigen::Index i = 0; i < n_; ++i) perm_[std::size_t(i)] = i;
  std::shuffle(perm_.begin(), perm_.end(), rng_.engine());
  cursor_ = 0;
}

const std::vector<Eigen::Index>& MinibatchStream::next_batch() {
  batch_.clear();
  const Eigen::Index from_current = std::min(m_, n_ - cursor_);
  batch_.insert(batch_.end(), perm_.begin() + cursor_, perm_.begin() + cursor_ + from_current);
  cursor_ += from_current;
  if (cursor_ == n_ && Eigen::Index(batch_.size()) < m_) {
    ++epoch_;
    reshuffle();
    // Move indices already in this batch out of the head of the new epoch.
    const Eigen::Index need = m_ - Eigen::Index(batch_.size());
    std::unordered_set<Eigen::Index> carried(batch_.begin(), batch_.end());
    Eigen::Index tail = need;
    for (Eigen::Index j = 0; j < need; ++j) {
      if (!carried.count(perm_[std::size_t(j)])) continue;
      while (carried.count(perm_[std::size_t(tail)])) ++tail;
      std::swap(perm_[std::size_t(j)], perm_[std::size_t(tail)]);
    }
    batch_.insert(batch_.end(), perm_.begin(), perm_.begin() + need);
    cursor_ = need;
  } else if (cursor_ == n_) {
    ++epoch_;
    reshuffle();
  }
  return batch_;
}

}  // namespace gibbsnet
