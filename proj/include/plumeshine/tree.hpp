#ifndef PLUMESHINE_TREE_HPP
#define PLUMESHINE_TREE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "plumeshine/dataset.hpp"
#include "plumeshine/error.hpp"
#include "plumeshine/random.hpp"

namespace plumeshine {

struct TreeParams {
    std::size_t max_depth = 15;
    std::size_t min_samples_leaf = 1;
    double max_features = 1.0;  ///< fraction of features tried at each split
};

struct TreeNode {
    std::int32_t feature = -1;  ///< -1 for a leaf
    double threshold = 0.0;     ///< go left when x[feature] <= threshold
    std::int32_t left = -1;
    std::int32_t right = -1;
    double value = 0.0;  ///< leaf prediction (sample mean)

    bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
    std::vector<TreeNode> nodes;  ///< nodes[0] is the root

    double predict(const double* x) const {
        std::size_t i = 0;
        while (!nodes[i].is_leaf()) {
            const auto& n = nodes[i];
            i = static_cast<std::size_t>(x[n.feature] <= n.threshold ? n.left : n.right);
        }
        return nodes[i].value;
    }

    std::size_t depth() const { return depth_from(0); }

    std::size_t leaf_count() const {
        return static_cast<std::size_t>(
            std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
    }

  private:
    std::size_t depth_from(std::size_t i) const {
        if (nodes[i].is_leaf()) return 0;
        return 1 + std::max(depth_from(static_cast<std::size_t>(nodes[i].left)),
                            depth_from(static_cast<std::size_t>(nodes[i].right)));
    }
};

/// Distinct sorted values of each feature and every row's rank among them.
/// Built once per training matrix and shared by all trees grown on it.
struct BinnedFeatures {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::vector<double>> values;
    std::vector<std::vector<std::uint32_t>> codes;

    static BinnedFeatures build(const FeatureMatrix& X) {
        BinnedFeatures b;
        b.rows = X.rows;
        b.cols = X.cols;
        b.values.resize(X.cols);
        b.codes.resize(X.cols);
        for (std::size_t f = 0; f < X.cols; ++f) {
            auto& v = b.values[f];
            v.reserve(X.rows);
            for (std::size_t i = 0; i < X.rows; ++i) {
                const double x = X.at(i, f);
                if (!std::isfinite(x)) throw DomainError("feature matrix contains a non-finite value");
                v.push_back(x);
            }
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            auto& c = b.codes[f];
            c.resize(X.rows);
            for (std::size_t i = 0; i < X.rows; ++i) {
                c[i] = static_cast<std::uint32_t>(std::lower_bound(v.begin(), v.end(), X.at(i, f)) - v.begin());
            }
        }
        return b;
    }
};

namespace detail {

// Splits improving the node's squared error by less than this fraction are
// rounding noise.
inline constexpr double kMinRelativeGain = 1e-12;

class TreeBuilder {
  public:
    TreeBuilder(const BinnedFeatures& b, const std::vector<double>& y, const TreeParams& p,
                const std::vector<std::size_t>& allowed, Rng& rng)
        : b_(b), y_(y), p_(p), allowed_(allowed), rng_(rng) {
        std::size_t max_bins = 0;
        for (const auto& v : b.values) max_bins = std::max(max_bins, v.size());
        count_.assign(max_bins, 0);
        sum_.assign(max_bins, 0.0);
        const double k = std::ceil(p.max_features * static_cast<double>(allowed.size()));
        n_candidates_ = std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, allowed.size());
    }

    RegressionTree build(std::vector<std::size_t> sample) {
        sample_ = std::move(sample);
        scratch_.resize(sample_.size());
        grow(0, sample_.size(), 0);
        return std::move(tree_);
    }

  private:
    struct Split {
        double gain = 0.0;
        std::int32_t feature = -1;
        std::uint32_t bin = 0;  ///< last bin that goes left
        double threshold = 0.0;
    };

    std::int32_t grow(std::size_t begin, std::size_t end, std::size_t depth) {
        const auto id = static_cast<std::int32_t>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        const std::size_t n = end - begin;
        double sum = 0.0;
        double lo = y_[sample_[begin]], hi = lo;
        for (std::size_t i = begin; i < end; ++i) {
            const double v = y_[sample_[i]];
            sum += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double mean = sum / static_cast<double>(n);
        tree_.nodes[id].value = mean;
        if (depth >= p_.max_depth || n < 2 || n < 2 * p_.min_samples_leaf || lo == hi) return id;

        double sse = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const double d = y_[sample_[i]] - mean;
            sse += d * d;
        }
        const Split best = find_split(begin, end, mean);
        if (best.feature < 0 || !(best.gain > kMinRelativeGain * sse)) return id;

        const auto& codes = b_.codes[static_cast<std::size_t>(best.feature)];
        std::size_t mid = begin, k = 0;
        for (std::size_t i = begin; i < end; ++i) {
            if (codes[sample_[i]] <= best.bin) {
                sample_[mid++] = sample_[i];
            } else {
                scratch_[k++] = sample_[i];
            }
        }
        std::copy_n(scratch_.begin(), k, sample_.begin() + static_cast<std::ptrdiff_t>(mid));

        tree_.nodes[id].feature = best.feature;
        tree_.nodes[id].threshold = best.threshold;
        const auto left = grow(begin, mid, depth + 1);
        const auto right = grow(mid, end, depth + 1);
        tree_.nodes[id].left = left;
        tree_.nodes[id].right = right;
        return id;
    }

    std::vector<std::size_t> candidate_features() {
        std::vector<std::size_t> f = allowed_;
        if (n_candidates_ < f.size()) {
            for (std::size_t i = 0; i < n_candidates_; ++i) {
                const auto j = i + static_cast<std::size_t>(rng_.below(f.size() - i));
                std::swap(f[i], f[j]);
            }
            f.resize(n_candidates_);
            std::sort(f.begin(), f.end());
        }
        return f;
    }

    // Exact search over every boundary between distinct values present in the
    // node. Sums are of y - mean so the gain does not cancel catastrophically.
    Split find_split(std::size_t begin, std::size_t end, double mean) {
        Split best;
        const double n = static_cast<double>(end - begin);
        for (const std::size_t f : candidate_features()) {
            const auto& codes = b_.codes[f];
            touched_.clear();
            double total = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                const auto row = sample_[i];
                const auto c = codes[row];
                if (count_[c]++ == 0) touched_.push_back(c);
                const double d = y_[row] - mean;
                sum_[c] += d;
                total += d;
            }
            std::sort(touched_.begin(), touched_.end());
            std::size_t n_left = 0;
            double s_left = 0.0;
            const double base = total * total / n;
            for (std::size_t t = 0; t + 1 < touched_.size(); ++t) {
                const auto c = touched_[t];
                n_left += count_[c];
                s_left += sum_[c];
                const std::size_t n_right = (end - begin) - n_left;
                if (n_left < p_.min_samples_leaf || n_right < p_.min_samples_leaf) continue;
                const double s_right = total - s_left;
                const double gain = s_left * s_left / static_cast<double>(n_left) +
                                    s_right * s_right / static_cast<double>(n_right) - base;
                if (gain > best.gain) {
                    const auto& v = b_.values[f];
                    best = Split{gain, static_cast<std::int32_t>(f), c, 0.5 * (v[c] + v[touched_[t + 1]])};
                }
            }
            for (const auto c : touched_) {
                count_[c] = 0;
                sum_[c] = 0.0;
            }
        }
        return best;
    }

    const BinnedFeatures& b_;
    const std::vector<double>& y_;
    const TreeParams& p_;
    const std::vector<std::size_t>& allowed_;
    Rng& rng_;
    std::size_t n_candidates_ = 1;
    std::vector<std::size_t> sample_, scratch_;
    std::vector<std::uint32_t> count_;
    std::vector<double> sum_;
    std::vector<std::uint32_t> touched_;
    RegressionTree tree_;
};

}  // namespace detail

/// Greedy variance-reduction tree on the rows listed in `sample` (repeats
/// allowed, as produced by bootstrapping). `allowed` restricts the features
/// considered; empty means all.
inline RegressionTree fit_tree(const BinnedFeatures& b, const std::vector<double>& y,
                               std::vector<std::size_t> sample, const TreeParams& params, Rng& rng,
                               std::vector<std::size_t> allowed = {}) {
    if (sample.empty() || b.rows == 0) throw ValidationError("cannot fit a tree on no rows");
    if (y.size() != b.rows) throw ValidationError("target length differs from feature rows");
    if (!(params.max_features > 0.0 && params.max_features <= 1.0)) {
        throw ValidationError("max_features must lie in (0, 1]");
    }
    if (params.min_samples_leaf < 1) throw ValidationError("min_samples_leaf must be >= 1");
    for (const double v : y) {
        if (!std::isfinite(v)) throw DomainError("tree targets must be finite");
    }
    if (allowed.empty()) {
        allowed.resize(b.cols);
        std::iota(allowed.begin(), allowed.end(), std::size_t{0});
    }
    return detail::TreeBuilder(b, y, params, allowed, rng).build(std::move(sample));
}

inline RegressionTree fit_tree(const FeatureMatrix& X, const std::vector<double>& y, const TreeParams& params,
                               Rng& rng) {
    if (X.rows == 0) throw ValidationError("cannot fit a tree on no rows");
    std::vector<std::size_t> all(X.rows);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return fit_tree(BinnedFeatures::build(X), y, std::move(all), params, rng);
}

}  // namespace plumeshine

#endif
