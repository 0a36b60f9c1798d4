#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dm {

inline constexpr std::size_t words_for_bits(std::size_t bits) noexcept {
  return (bits + 63) / 64;
}

/// Read-only view of a packed bit vector of length `size()`. Bit j lives in
/// word j / 64 at position j % 64, which serializes to byte j / 8, bit j % 8.
class MaskView {
 public:
  MaskView(const std::uint64_t* words, std::size_t bits) noexcept
      : words_(words), bits_(bits) {}

  std::size_t size() const noexcept { return bits_; }
  std::span<const std::uint64_t> words() const noexcept {
    return {words_, words_for_bits(bits_)};
  }

  bool test(std::size_t j) const noexcept {
    return (words_[j >> 6] >> (j & 63)) & 1u;
  }

  std::size_t cardinality() const noexcept {
    std::size_t c = 0;
    for (auto w : words()) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }

  template <typename F>
  void for_each_set(F&& f) const {
    const std::size_t nw = words_for_bits(bits_);
    for (std::size_t w = 0; w < nw; ++w) {
      std::uint64_t bits = words_[w];
      while (bits) {
        const int t = std::countr_zero(bits);
        f(w * 64 + static_cast<std::size_t>(t));
        bits &= bits - 1;
      }
    }
  }

  std::vector<std::size_t> indices() const;
  Eigen::VectorXd to_dense() const;

 private:
  const std::uint64_t* words_;
  std::size_t bits_;
};

/// Characteristic vector of one subset of {0..d-1}.
class SubsetMask {
 public:
  SubsetMask() = default;
  explicit SubsetMask(std::size_t d) : words_(words_for_bits(d), 0), d_(d) {}

  /// Bit j set iff j is in `subset`. Throws ValidationError for j >= d.
  static SubsetMask from_indices(std::span<const std::size_t> subset,
                                 std::size_t d);
  static SubsetMask full(std::size_t d);

  std::size_t size() const noexcept { return d_; }
  std::size_t cardinality() const noexcept { return cardinality_; }
  bool test(std::size_t j) const noexcept { return view().test(j); }

  void set(std::size_t j);
  void reset(std::size_t j);

  MaskView view() const noexcept { return {words_.data(), d_}; }
  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::vector<std::size_t> indices() const { return view().indices(); }

  friend bool operator==(const SubsetMask&, const SubsetMask&) = default;

 private:
  std::vector<std::uint64_t> words_;
  std::size_t d_ = 0;
  std::size_t cardinality_ = 0;
};

/// Builds the characteristic vector of `subset` within a universe of size d.
inline SubsetMask characteristic_vector(std::span<const std::size_t> subset,
                                        std::size_t d) {
  return SubsetMask::from_indices(subset, d);
}

/// m x d matrix of subset-membership rows, stored contiguously.
class MaskMatrix {
 public:
  MaskMatrix() = default;
  MaskMatrix(std::size_t m, std::size_t d, double alpha, std::uint64_t seed);

  std::size_t rows() const noexcept { return m_; }
  std::size_t cols() const noexcept { return d_; }
  double alpha() const noexcept { return alpha_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t words_per_row() const noexcept { return wpr_; }

  MaskView row(std::size_t i) const noexcept {
    return {data_.data() + i * wpr_, d_};
  }
  void set_row(std::size_t i, const SubsetMask& mask);
  void set_bit(std::size_t i, std::size_t j);

  /// Rows [begin, end) as a new matrix with the same metadata.
  MaskMatrix slice(std::size_t begin, std::size_t end) const;
  /// Selected rows, in order.
  MaskMatrix select(std::span<const std::size_t> rows) const;

  std::span<const std::uint64_t> data() const noexcept { return data_; }

  friend bool operator==(const MaskMatrix&, const MaskMatrix&) = default;

 private:
  std::size_t m_ = 0;
  std::size_t d_ = 0;
  double alpha_ = 0.0;
  std::uint64_t seed_ = 0;
  std::size_t wpr_ = 0;
  std::vector<std::uint64_t> data_;
};

/// Labeled examples with stable indices 0..d-1. Optionally carries a real
/// response per example for regression learners.
class TrainingSet {
 public:
  TrainingSet() = default;
  TrainingSet(Eigen::MatrixXd features, std::vector<int> labels,
              int num_classes);
  TrainingSet(Eigen::MatrixXd features, std::vector<double> responses);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept {
    return static_cast<std::size_t>(features_.cols());
  }
  int num_classes() const noexcept { return num_classes_; }
  bool has_responses() const noexcept { return !responses_.empty(); }

  const Eigen::MatrixXd& features() const noexcept { return features_; }
  auto feature_row(std::size_t i) const { return features_.row(static_cast<Eigen::Index>(i)); }
  int label(std::size_t i) const { return labels_.at(i); }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<double>& responses() const noexcept { return responses_; }

  /// Copy with the labels at `indices` replaced by `new_label`.
  TrainingSet relabeled(std::span<const std::size_t> indices,
                        int new_label) const;

 private:
  Eigen::MatrixXd features_;
  std::vector<int> labels_;
  std::vector<double> responses_;
  int num_classes_ = 0;
};

/// Model-output functions f(x; S). `prediction` is the raw scalar output of
/// a regression learner.
enum class OutputFn : std::uint32_t {
  margin = 0,
  correctness = 1,
  confidence = 2,
  xent = 3,
  prediction = 4,
};

std::string_view to_string(OutputFn fn) noexcept;
OutputFn parse_output_fn(std::string_view name);

/// m x n recorded outputs, one row per trained model and one column per
/// target, plus the exclusion channel: excluded(i, j) marks a training-set
/// target j that was a member of S_i. Values are stored as f32.
class OutputMatrix {
 public:
  OutputMatrix() = default;
  OutputMatrix(std::size_t m, std::size_t n, OutputFn fn,
               std::string trainer_id);

  std::size_t rows() const noexcept { return m_; }
  std::size_t cols() const noexcept { return n_; }
  OutputFn output_fn() const noexcept { return fn_; }
  const std::string& trainer_id() const noexcept { return trainer_id_; }

  float value(std::size_t i, std::size_t j) const noexcept {
    return values_[i * n_ + j];
  }
  void set_value(std::size_t i, std::size_t j, float v) noexcept {
    values_[i * n_ + j] = v;
  }
  bool excluded(std::size_t i, std::size_t j) const noexcept {
    return exclusion_row(i).test(j);
  }
  void set_excluded(std::size_t i, std::size_t j, bool on = true) noexcept;
  MaskView exclusion_row(std::size_t i) const noexcept {
    return {excl_.data() + i * ewpr_, n_};
  }
  bool any_excluded_in_column(std::size_t j) const noexcept;

  std::span<const float> values() const noexcept { return values_; }
  std::span<const float> row_values(std::size_t i) const noexcept {
    return {values_.data() + i * n_, n_};
  }

  OutputMatrix slice(std::size_t begin, std::size_t end) const;
  OutputMatrix select(std::span<const std::size_t> rows) const;
  /// Rows of `other` appended below this matrix (same n / fn / trainer).
  void append(const OutputMatrix& other);

  friend bool operator==(const OutputMatrix&, const OutputMatrix&) = default;

 private:
  std::size_t m_ = 0;
  std::size_t n_ = 0;
  OutputFn fn_ = OutputFn::margin;
  std::string trainer_id_;
  std::size_t ewpr_ = 0;
  std::vector<float> values_;
  std::vector<std::uint64_t> excl_;
};

/// Linear surrogate theta . 1_S + bias for one target, with provenance.
struct Datamodel {
  Eigen::VectorXd theta;
  double bias = 0.0;
  double alpha = 0.0;
  double lambda = 0.0;
  std::uint64_t target_id = 0;
  OutputFn output_fn = OutputFn::margin;
  std::string trainer_id;

  double predict(MaskView mask) const;
  std::size_t sparsity() const;
};

}  // namespace dm
