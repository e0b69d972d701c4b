#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "epopr/domain.hpp"

namespace epopr::forest {

struct QrfParams {
  int n_trees = 200;
  int min_leaf = 5;
  int max_depth = 0;          // 0 = grow until min_leaf stops splitting
  int feature_subsample = 3;  // candidate features per split
  bool bootstrap = true;
  std::uint64_t seed = 0;
  int n_threads = 1;  // fit parallelism; output is independent of it
};

void validate(const QrfParams& p);

// Target coverage alpha and the induced lower/upper quantile levels.
class QuantilePair {
 public:
  explicit QuantilePair(double alpha);

  double alpha() const { return alpha_; }
  double lo() const { return (1.0 - alpha_) / 2.0; }
  double hi() const { return (1.0 + alpha_) / 2.0; }

 private:
  double alpha_;
};

// One regression tree. Split nodes route x[feature] <= threshold to the
// left child. Leaves keep the sorted training targets that land in them.
struct Tree {
  struct Node {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t leaf = -1;  // index into leaf_offsets for leaves

    friend bool operator==(const Node&, const Node&) = default;
  };

  std::vector<Node> nodes;
  std::vector<std::uint32_t> leaf_offsets;  // size = n_leaves + 1
  std::vector<double> leaf_values;

  std::size_t n_leaves() const { return leaf_offsets.size() - 1; }
  std::span<const double> leaf_targets(std::size_t leaf) const;
  std::size_t find_leaf(std::span<const double> x) const;

  friend bool operator==(const Tree&, const Tree&) = default;
};

class QrfModel {
 public:
  QrfModel() = default;
  QrfModel(QrfParams params, std::vector<Tree> trees);

  const QrfParams& params() const { return params_; }
  const std::vector<Tree>& trees() const { return trees_; }
  bool fitted() const { return !trees_.empty(); }

  // Generalized inverse of the forest-weighted conditional CDF at x.
  double predict_quantile(std::span<const double> x, double alpha) const;
  // Same, for several levels at once (one pooling pass).
  std::vector<double> predict_quantiles(std::span<const double> x,
                                        std::span<const double> alphas) const;
  // Uncalibrated [q_lo(x), q_hi(x)].
  PredictionInterval predict_interval_raw(std::span<const double> x,
                                          const QuantilePair& qp) const;

  friend bool operator==(const QrfModel& a, const QrfModel& b) {
    return a.trees_ == b.trees_ && a.params_.n_trees == b.params_.n_trees &&
           a.params_.min_leaf == b.params_.min_leaf &&
           a.params_.max_depth == b.params_.max_depth &&
           a.params_.feature_subsample == b.params_.feature_subsample &&
           a.params_.bootstrap == b.params_.bootstrap &&
           a.params_.seed == b.params_.seed;
  }

 private:
  QrfParams params_;
  std::vector<Tree> trees_;
};

// Throws kEmptyTrainingSet on empty input and kInvalidConfig on bad params.
QrfModel fit(std::span<const RepairRecord> train, const QrfParams& params);

// Checkpoint section "QRF1".
void save(const QrfModel& m, std::ostream& os);
QrfModel load(std::istream& is);

}  // namespace epopr::forest
