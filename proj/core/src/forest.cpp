#include "epopr/forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <thread>

#include "epopr/binary_io.hpp"
#include "epopr/random.hpp"

namespace epopr::forest {
namespace {

// Cumulative forest weights are sums of 1/(T*L) terms; this absorbs their
// rounding so that e.g. five weights of 0.1 reach alpha = 0.5.
constexpr double kMassTolerance = 1e-12;

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(Errc::kAlphaOutOfRange,
                "quantile level must lie in (0, 1), got " + std::to_string(alpha));
  }
}

bool canonical_less(const RepairRecord& a, const RepairRecord& b) {
  if (a.region_id != b.region_id) return a.region_id < b.region_id;
  if (a.repair_duration != b.repair_duration) {
    return a.repair_duration < b.repair_duration;
  }
  const auto n = std::min(a.features.size(), b.features.size());
  const int c = std::memcmp(a.features.data(), b.features.data(),
                            n * sizeof(double));
  if (c != 0) return c < 0;
  return a.features.size() < b.features.size();
}

struct TrainMatrix {
  std::size_t n = 0;
  std::vector<double> x;  // row-major n x kFeatureDim
  std::vector<double> y;

  double at(std::size_t i, std::size_t f) const { return x[i * kFeatureDim + f]; }
};

class TreeBuilder {
 public:
  TreeBuilder(const TrainMatrix& data, const QrfParams& params,
              std::uint64_t tree_index)
      : data_(data),
        params_(params),
        rng_(make_rng(params.seed, tree_index)),
        weight_(data.n, 0) {}

  Tree build() {
    if (params_.bootstrap) {
      for (std::size_t k = 0; k < data_.n; ++k) {
        ++weight_[uniform_index(rng_, data_.n)];
      }
    } else {
      std::fill(weight_.begin(), weight_.end(), 1u);
    }
    idx_.resize(data_.n);
    std::iota(idx_.begin(), idx_.end(), 0u);

    struct Work {
      std::int32_t node;
      std::size_t begin, end;
      int depth;
    };
    tree_.nodes.emplace_back();
    std::vector<Work> stack = {{0, 0, data_.n, 0}};
    std::vector<std::pair<std::size_t, std::size_t>> leaf_ranges;

    while (!stack.empty()) {
      const Work w = stack.back();
      stack.pop_back();
      Split s;
      const bool can_split =
          (params_.max_depth == 0 || w.depth < params_.max_depth) &&
          w.end - w.begin >= 2 * static_cast<std::size_t>(params_.min_leaf);
      if (can_split && find_split(w.begin, w.end, s)) {
        const auto mid = partition(w.begin, w.end, s);
        const auto left = static_cast<std::int32_t>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        tree_.nodes.emplace_back();
        auto& node = tree_.nodes[w.node];
        node.feature = static_cast<std::int32_t>(s.feature);
        node.threshold = s.threshold;
        node.left = left;
        node.right = left + 1;
        // Right pushed first so the left subtree is expanded first.
        stack.push_back({left + 1, mid, w.end, w.depth + 1});
        stack.push_back({left, w.begin, mid, w.depth + 1});
      } else {
        tree_.nodes[w.node].leaf = static_cast<std::int32_t>(leaf_ranges.size());
        leaf_ranges.emplace_back(w.begin, w.end);
      }
    }

    tree_.leaf_offsets.push_back(0);
    for (const auto& [b, e] : leaf_ranges) {
      const auto start = tree_.leaf_values.size();
      for (std::size_t k = b; k < e; ++k) tree_.leaf_values.push_back(data_.y[idx_[k]]);
      std::sort(tree_.leaf_values.begin() + static_cast<std::ptrdiff_t>(start),
                tree_.leaf_values.end());
      tree_.leaf_offsets.push_back(static_cast<std::uint32_t>(tree_.leaf_values.size()));
    }
    return std::move(tree_);
  }

 private:
  struct Split {
    std::size_t feature = 0;
    double threshold = 0.0;
    double gain = 0.0;
  };

  // Candidate splits are scored by in-bag (bootstrap-weighted) squared-error
  // reduction; admissibility uses the full sample so that every leaf holds at
  // least min_leaf training targets.
  bool find_split(std::size_t begin, std::size_t end, Split& best) {
    std::array<std::size_t, kFeatureDim> feats;
    std::iota(feats.begin(), feats.end(), 0);
    const auto m = std::min<std::size_t>(params_.feature_subsample, kFeatureDim);
    for (std::size_t i = 0; i < m; ++i) {
      std::swap(feats[i], feats[i + uniform_index(rng_, kFeatureDim - i)]);
    }

    double w_total = 0.0, s_total = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const auto i = idx_[k];
      w_total += weight_[i];
      s_total += weight_[i] * data_.y[i];
    }
    if (w_total < 2.0) return false;
    const double base = s_total * s_total / w_total;
    const auto min_leaf = static_cast<std::size_t>(params_.min_leaf);

    bool found = false;
    best.gain = 0.0;
    for (std::size_t fi = 0; fi < m; ++fi) {
      const auto f = feats[fi];
      scratch_.assign(idx_.begin() + static_cast<std::ptrdiff_t>(begin),
                      idx_.begin() + static_cast<std::ptrdiff_t>(end));
      std::sort(scratch_.begin(), scratch_.end(), [&](std::uint32_t a, std::uint32_t b) {
        const double xa = data_.at(a, f), xb = data_.at(b, f);
        return xa < xb || (xa == xb && a < b);
      });
      double wl = 0.0, sl = 0.0;
      const std::size_t n = scratch_.size();
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const auto i = scratch_[k];
        wl += weight_[i];
        sl += weight_[i] * data_.y[i];
        const double xk = data_.at(i, f);
        const double xn = data_.at(scratch_[k + 1], f);
        if (xk == xn) continue;
        const std::size_t nl = k + 1;
        if (nl < min_leaf || n - nl < min_leaf) continue;
        const double wr = w_total - wl;
        if (wl < 1.0 || wr < 1.0) continue;
        const double sr = s_total - sl;
        const double gain = sl * sl / wl + sr * sr / wr - base;
        if (gain > best.gain + 1e-12 * std::abs(base)) {
          best = {f, 0.5 * (xk + xn), gain};
          // A midpoint that rounds onto the upper value would misroute it.
          if (!(best.threshold < xn)) best.threshold = xk;
          found = true;
        }
      }
    }
    return found;
  }

  std::size_t partition(std::size_t begin, std::size_t end, const Split& s) {
    auto first = idx_.begin() + static_cast<std::ptrdiff_t>(begin);
    auto last = idx_.begin() + static_cast<std::ptrdiff_t>(end);
    auto mid = std::stable_partition(first, last, [&](std::uint32_t i) {
      return data_.at(i, s.feature) <= s.threshold;
    });
    return static_cast<std::size_t>(mid - idx_.begin());
  }

  const TrainMatrix& data_;
  const QrfParams& params_;
  Rng rng_;
  std::vector<std::uint32_t> weight_;
  std::vector<std::uint32_t> idx_;
  std::vector<std::uint32_t> scratch_;
  Tree tree_;
};

}  // namespace

void validate(const QrfParams& p) {
  if (p.n_trees < 1) throw Error(Errc::kInvalidConfig, "n_trees must be >= 1");
  if (p.min_leaf < 1) throw Error(Errc::kInvalidConfig, "min_leaf must be >= 1");
  if (p.max_depth < 0) throw Error(Errc::kInvalidConfig, "max_depth must be >= 0");
  if (p.feature_subsample < 1 || p.feature_subsample > static_cast<int>(kFeatureDim)) {
    throw Error(Errc::kInvalidConfig, "feature_subsample must be in [1, 9]");
  }
  if (p.n_threads < 1) throw Error(Errc::kInvalidConfig, "n_threads must be >= 1");
}

QuantilePair::QuantilePair(double alpha) : alpha_(alpha) { check_alpha(alpha); }

std::span<const double> Tree::leaf_targets(std::size_t leaf) const {
  return {leaf_values.data() + leaf_offsets[leaf],
          leaf_values.data() + leaf_offsets[leaf + 1]};
}

std::size_t Tree::find_leaf(std::span<const double> x) const {
  std::size_t n = 0;
  while (nodes[n].feature >= 0) {
    const auto& node = nodes[n];
    n = static_cast<std::size_t>(x[node.feature] <= node.threshold ? node.left
                                                                   : node.right);
  }
  return static_cast<std::size_t>(nodes[n].leaf);
}

QrfModel::QrfModel(QrfParams params, std::vector<Tree> trees)
    : params_(params), trees_(std::move(trees)) {}

std::vector<double> QrfModel::predict_quantiles(
    std::span<const double> x, std::span<const double> alphas) const {
  for (double a : alphas) check_alpha(a);
  if (!fitted()) throw Error(Errc::kPrecondition, "model is not fitted");
  if (x.size() != kFeatureDim) {
    throw Error(Errc::kFeatureDimension,
                "expected " + std::to_string(kFeatureDim) + " features, got " +
                    std::to_string(x.size()));
  }
  std::vector<std::pair<double, double>> pool;
  const double per_tree = 1.0 / static_cast<double>(trees_.size());
  for (const auto& t : trees_) {
    const auto leaf = t.leaf_targets(t.find_leaf(x));
    const double w = per_tree / static_cast<double>(leaf.size());
    for (double y : leaf) pool.emplace_back(y, w);
  }
  std::sort(pool.begin(), pool.end());
  std::vector<double> cum(pool.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    acc += pool[i].second;
    cum[i] = acc;
  }
  std::vector<double> out;
  out.reserve(alphas.size());
  for (double a : alphas) {
    auto it = std::lower_bound(cum.begin(), cum.end(), a - kMassTolerance);
    if (it == cum.end()) --it;
    out.push_back(pool[static_cast<std::size_t>(it - cum.begin())].first);
  }
  return out;
}

double QrfModel::predict_quantile(std::span<const double> x, double alpha) const {
  const double a[1] = {alpha};
  return predict_quantiles(x, a).front();
}

PredictionInterval QrfModel::predict_interval_raw(std::span<const double> x,
                                                  const QuantilePair& qp) const {
  const double levels[2] = {qp.lo(), qp.hi()};
  const auto q = predict_quantiles(x, levels);
  return {q[0], q[1]};
}

QrfModel fit(std::span<const RepairRecord> train, const QrfParams& params) {
  validate(params);
  if (train.empty()) {
    throw Error(Errc::kEmptyTrainingSet, "cannot fit a forest on no records");
  }
  std::vector<const RepairRecord*> sorted;
  sorted.reserve(train.size());
  for (const auto& r : train) {
    if (r.features.size() != kFeatureDim) {
      throw Error(Errc::kFeatureDimension, "training record with wrong feature count");
    }
    sorted.push_back(&r);
  }
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const RepairRecord* a, const RepairRecord* b) {
                     return canonical_less(*a, *b);
                   });
  TrainMatrix data;
  data.n = sorted.size();
  data.x.reserve(data.n * kFeatureDim);
  for (const auto* r : sorted) {
    data.x.insert(data.x.end(), r->features.begin(), r->features.end());
    data.y.push_back(r->repair_duration);
  }

  std::vector<Tree> trees(static_cast<std::size_t>(params.n_trees));
  auto grow = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t t = worker; t < trees.size(); t += stride) {
      trees[t] = TreeBuilder(data, params, t).build();
    }
  };
  const auto n_workers = std::min<std::size_t>(params.n_threads, trees.size());
  if (n_workers <= 1) {
    grow(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(grow, w, n_workers);
  }
  return QrfModel(params, std::move(trees));
}

void save(const QrfModel& m, std::ostream& os) {
  io::BinaryWriter w(os);
  w.magic("QRF1");
  w.u32(1);
  const auto& p = m.params();
  w.i64(p.n_trees);
  w.i64(p.min_leaf);
  w.i64(p.max_depth);
  w.i64(p.feature_subsample);
  w.u32(p.bootstrap ? 1 : 0);
  w.u64(p.seed);
  w.u64(m.trees().size());
  for (const auto& t : m.trees()) {
    w.u64(t.nodes.size());
    for (const auto& n : t.nodes) {
      w.i64(n.feature);
      w.f64(n.threshold);
      w.i64(n.left);
      w.i64(n.right);
      w.i64(n.leaf);
    }
    w.u64(t.leaf_offsets.size());
    for (auto o : t.leaf_offsets) w.u32(o);
    w.f64s(t.leaf_values);
  }
  if (!os) throw Error(Errc::kIo, "failed writing QRF1 section");
}

QrfModel load(std::istream& is) {
  io::BinaryReader r(is);
  r.expect_magic("QRF1");
  if (const auto version = r.u32(); version != 1) {
    throw Error(Errc::kFormat, "unsupported QRF1 version " + std::to_string(version));
  }
  QrfParams p;
  p.n_trees = static_cast<int>(r.i64());
  p.min_leaf = static_cast<int>(r.i64());
  p.max_depth = static_cast<int>(r.i64());
  p.feature_subsample = static_cast<int>(r.i64());
  p.bootstrap = r.u32() != 0;
  p.seed = r.u64();
  const auto n_trees = r.u64();
  if (n_trees != static_cast<std::uint64_t>(p.n_trees)) {
    throw Error(Errc::kFormat, "tree count does not match parameters");
  }
  std::vector<Tree> trees(n_trees);
  for (auto& t : trees) {
    const auto n_nodes = r.u64();
    if (n_nodes == 0 || n_nodes > (1ULL << 31)) {
      throw Error(Errc::kFormat, "bad node count");
    }
    t.nodes.resize(n_nodes);
    for (auto& n : t.nodes) {
      n.feature = static_cast<std::int32_t>(r.i64());
      n.threshold = r.f64();
      n.left = static_cast<std::int32_t>(r.i64());
      n.right = static_cast<std::int32_t>(r.i64());
      n.leaf = static_cast<std::int32_t>(r.i64());
    }
    const auto n_off = r.u64();
    if (n_off < 2 || n_off > (1ULL << 31)) throw Error(Errc::kFormat, "bad leaf table");
    t.leaf_offsets.resize(n_off);
    for (auto& o : t.leaf_offsets) o = r.u32();
    t.leaf_values = r.f64s();
    if (t.leaf_offsets.back() != t.leaf_values.size()) {
      throw Error(Errc::kFormat, "leaf table does not match leaf values");
    }
    for (const auto& n : t.nodes) {
      const auto nn = static_cast<std::int32_t>(t.nodes.size());
      const bool ok = n.feature < 0
                          ? (n.leaf >= 0 && static_cast<std::size_t>(n.leaf) < t.n_leaves())
                          : (n.feature < static_cast<std::int32_t>(kFeatureDim) &&
                             n.left > 0 && n.left < nn && n.right > 0 && n.right < nn);
      if (!ok) throw Error(Errc::kFormat, "corrupt tree node");
    }
  }
  return QrfModel(p, std::move(trees));
}

}  // namespace epopr::forest
