#include "datamodels/core_data.hpp"

#include <algorithm>
#include <array>

#include "datamodels/errors.hpp"

namespace dm {

std::vector<std::size_t> MaskView::indices() const {
  std::vector<std::size_t> out;
  out.reserve(cardinality());
  for_each_set([&](std::size_t j) { out.push_back(j); });
  return out;
}

Eigen::VectorXd MaskView::to_dense() const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bits_));
  for_each_set([&](std::size_t j) { v[static_cast<Eigen::Index>(j)] = 1.0; });
  return v;
}

SubsetMask SubsetMask::from_indices(std::span<const std::size_t> subset,
                                    std::size_t d) {
  SubsetMask mask(d);
  for (auto j : subset) mask.set(j);
  return mask;
}

SubsetMask SubsetMask::full(std::size_t d) {
  SubsetMask mask(d);
  for (std::size_t j = 0; j < d; ++j) mask.set(j);
  return mask;
}

void SubsetMask::set(std::size_t j) {
  if (j >= d_) {
    throw ValidationError("subset index " + std::to_string(j) +
                          " out of range for d=" + std::to_string(d_));
  }
  auto& w = words_[j >> 6];
  const std::uint64_t bit = std::uint64_t{1} << (j & 63);
  if (!(w & bit)) {
    w |= bit;
    ++cardinality_;
  }
}

void SubsetMask::reset(std::size_t j) {
  if (j >= d_) {
    throw ValidationError("subset index " + std::to_string(j) +
                          " out of range for d=" + std::to_string(d_));
  }
  auto& w = words_[j >> 6];
  const std::uint64_t bit = std::uint64_t{1} << (j & 63);
  if (w & bit) {
    w &= ~bit;
    --cardinality_;
  }
}

MaskMatrix::MaskMatrix(std::size_t m, std::size_t d, double alpha,
                       std::uint64_t seed)
    : m_(m), d_(d), alpha_(alpha), seed_(seed), wpr_(words_for_bits(d)),
      data_(m * words_for_bits(d), 0) {}

void MaskMatrix::set_row(std::size_t i, const SubsetMask& mask) {
  if (i >= m_ || mask.size() != d_) {
    throw ValidationError("set_row: row " + std::to_string(i) +
                          " / width " + std::to_string(mask.size()) +
                          " does not fit a " + std::to_string(m_) + "x" +
                          std::to_string(d_) + " mask matrix");
  }
  std::copy(mask.words().begin(), mask.words().end(),
            data_.begin() + static_cast<std::ptrdiff_t>(i * wpr_));
}

void MaskMatrix::set_bit(std::size_t i, std::size_t j) {
  if (i >= m_ || j >= d_) throw ValidationError("set_bit: index out of range");
  data_[i * wpr_ + (j >> 6)] |= std::uint64_t{1} << (j & 63);
}

MaskMatrix MaskMatrix::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > m_) throw ValidationError("mask slice out of range");
  MaskMatrix out(end - begin, d_, alpha_, seed_);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * wpr_),
            data_.begin() + static_cast<std::ptrdiff_t>(end * wpr_),
            out.data_.begin());
  return out;
}

MaskMatrix MaskMatrix::select(std::span<const std::size_t> rows) const {
  MaskMatrix out(rows.size(), d_, alpha_, seed_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m_) throw ValidationError("mask select out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[r] * wpr_),
                wpr_, out.data_.begin() + static_cast<std::ptrdiff_t>(r * wpr_));
  }
  return out;
}

TrainingSet::TrainingSet(Eigen::MatrixXd features, std::vector<int> labels,
                         int num_classes)
    : features_(std::move(features)), labels_(std::move(labels)),
      num_classes_(num_classes) {
  if (num_classes_ <= 0) throw ValidationError("num_classes must be positive");
  if (static_cast<std::size_t>(features_.rows()) != labels_.size()) {
    throw ValidationError("feature rows (" + std::to_string(features_.rows()) +
                          ") != label count (" +
                          std::to_string(labels_.size()) + ")");
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0 || labels_[i] >= num_classes_) {
      throw ValidationError("label " + std::to_string(labels_[i]) +
                            " at index " + std::to_string(i) +
                            " outside [0, " + std::to_string(num_classes_) +
                            ")");
    }
  }
}

TrainingSet::TrainingSet(Eigen::MatrixXd features,
                         std::vector<double> responses)
    : features_(std::move(features)),
      labels_(responses.size(), 0),
      responses_(std::move(responses)),
      num_classes_(1) {
  if (static_cast<std::size_t>(features_.rows()) != responses_.size()) {
    throw ValidationError("feature rows != response count");
  }
}

TrainingSet TrainingSet::relabeled(std::span<const std::size_t> indices,
                                   int new_label) const {
  if (new_label < 0 || new_label >= num_classes_) {
    throw ValidationError("relabel target class out of range");
  }
  TrainingSet out = *this;
  for (auto i : indices) {
    if (i >= size()) throw ValidationError("relabel index out of range");
    out.labels_[i] = new_label;
  }
  return out;
}

namespace {
constexpr std::array<std::string_view, 5> kFnNames = {
    "margin", "correctness", "confidence", "xent", "prediction"};
}

std::string_view to_string(OutputFn fn) noexcept {
  const auto k = static_cast<std::size_t>(fn);
  return k < kFnNames.size() ? kFnNames[k] : std::string_view{"unknown"};
}

OutputFn parse_output_fn(std::string_view name) {
  for (std::size_t k = 0; k < kFnNames.size(); ++k) {
    if (kFnNames[k] == name) return static_cast<OutputFn>(k);
  }
  throw ValidationError("unknown output function '" + std::string(name) + "'");
}

OutputMatrix::OutputMatrix(std::size_t m, std::size_t n, OutputFn fn,
                           std::string trainer_id)
    : m_(m), n_(n), fn_(fn), trainer_id_(std::move(trainer_id)),
      ewpr_(words_for_bits(n)), values_(m * n, 0.0f),
      excl_(m * words_for_bits(n), 0) {}

void OutputMatrix::set_excluded(std::size_t i, std::size_t j, bool on) noexcept {
  auto& w = excl_[i * ewpr_ + (j >> 6)];
  const std::uint64_t bit = std::uint64_t{1} << (j & 63);
  w = on ? (w | bit) : (w & ~bit);
}

bool OutputMatrix::any_excluded_in_column(std::size_t j) const noexcept {
  for (std::size_t i = 0; i < m_; ++i) {
    if (excluded(i, j)) return true;
  }
  return false;
}

OutputMatrix OutputMatrix::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > m_) throw ValidationError("output slice out of range");
  OutputMatrix out(end - begin, n_, fn_, trainer_id_);
  std::copy(values_.begin() + static_cast<std::ptrdiff_t>(begin * n_),
            values_.begin() + static_cast<std::ptrdiff_t>(end * n_),
            out.values_.begin());
  std::copy(excl_.begin() + static_cast<std::ptrdiff_t>(begin * ewpr_),
            excl_.begin() + static_cast<std::ptrdiff_t>(end * ewpr_),
            out.excl_.begin());
  return out;
}

OutputMatrix OutputMatrix::select(std::span<const std::size_t> rows) const {
  OutputMatrix out(rows.size(), n_, fn_, trainer_id_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = rows[r];
    if (i >= m_) throw ValidationError("output select out of range");
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(i * n_), n_,
                out.values_.begin() + static_cast<std::ptrdiff_t>(r * n_));
    std::copy_n(excl_.begin() + static_cast<std::ptrdiff_t>(i * ewpr_), ewpr_,
                out.excl_.begin() + static_cast<std::ptrdiff_t>(r * ewpr_));
  }
  return out;
}

void OutputMatrix::append(const OutputMatrix& other) {
  if (other.n_ != n_ || other.fn_ != fn_ || other.trainer_id_ != trainer_id_) {
    throw ValidationError("cannot append outputs with different shape or provenance");
  }
  values_.insert(values_.end(), other.values_.begin(), other.values_.end());
  excl_.insert(excl_.end(), other.excl_.begin(), other.excl_.end());
  m_ += other.m_;
}

double Datamodel::predict(MaskView mask) const {
  if (mask.size() != static_cast<std::size_t>(theta.size())) {
    throw ValidationError("mask width " + std::to_string(mask.size()) +
                          " != datamodel dimension " +
                          std::to_string(theta.size()));
  }
  double s = bias;
  mask.for_each_set([&](std::size_t j) { s += theta[static_cast<Eigen::Index>(j)]; });
  return s;
}

std::size_t Datamodel::sparsity() const {
  return static_cast<std::size_t>((theta.array() != 0.0).count());
}

}  // namespace dm
