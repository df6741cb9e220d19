#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "hsd/common.hpp"

namespace hsd {

// Binary tree over numeric features. Splits send x[feature] <= threshold to
// the left child; leaves carry a single value (class index or regression
// output depending on how the tree was grown).
struct DecisionTree {
    struct Node {
        int feature = -1;        // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        double value = 0.0;
    };

    std::vector<Node> nodes;

    bool empty() const { return nodes.empty(); }

    double predict(const std::vector<double>& x) const {
        if (nodes.empty()) throw DataError("cannot predict with an empty tree");
        int at = 0;
        while (nodes[at].feature >= 0) {
            const Node& n = nodes[at];
            if (static_cast<std::size_t>(n.feature) >= x.size())
                throw DataError("feature width smaller than the tree expects");
            at = x[n.feature] <= n.threshold ? n.left : n.right;
        }
        return nodes[at].value;
    }

    // Index of the leaf node reached by x; used to recompute leaf values.
    int leaf_index(const std::vector<double>& x) const {
        if (nodes.empty()) throw DataError("cannot walk an empty tree");
        int at = 0;
        while (nodes[at].feature >= 0)
            at = x[nodes[at].feature] <= nodes[at].threshold ? nodes[at].left : nodes[at].right;
        return at;
    }

    int depth() const {
        if (nodes.empty()) return 0;
        std::function<int(int)> walk = [&](int at) -> int {
            if (nodes[at].feature < 0) return 0;
            return 1 + std::max(walk(nodes[at].left), walk(nodes[at].right));
        };
        return walk(0);
    }
};

namespace detail {

using Rows = std::vector<std::vector<double>>;

// Candidate feature set for one split; identity when max_features covers all.
inline std::vector<int> sample_features(int n_features, int max_features, std::mt19937_64* rng) {
    std::vector<int> all(static_cast<std::size_t>(n_features));
    std::iota(all.begin(), all.end(), 0);
    if (max_features <= 0 || max_features >= n_features || rng == nullptr) return all;
    for (int i = 0; i < max_features; ++i) {
        auto j = i + static_cast<int>((*rng)() % static_cast<std::uint64_t>(n_features - i));
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
    }
    all.resize(static_cast<std::size_t>(max_features));
    std::sort(all.begin(), all.end());   // ascending scan keeps tie-breaks stable
    return all;
}

struct SplitChoice {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double score = std::numeric_limits<double>::infinity();   // lower is better
};

// best split by weighted Gini impurity of the children
inline SplitChoice best_gini_split(const Rows& X, const std::vector<int>& y,
                                   const std::vector<double>& w,
                                   const std::vector<std::size_t>& idx, int n_classes,
                                   const std::vector<int>& features) {
    SplitChoice best;
    double total_w = 0.0;
    std::vector<double> total_counts(static_cast<std::size_t>(n_classes), 0.0);
    for (std::size_t i : idx) {
        total_w += w[i];
        total_counts[static_cast<std::size_t>(y[i])] += w[i];
    }
    if (total_w <= 0.0) return best;

    std::vector<std::pair<double, std::size_t>> order(idx.size());
    std::vector<double> left(static_cast<std::size_t>(n_classes));
    for (int f : features) {
        for (std::size_t k = 0; k < idx.size(); ++k)
            order[k] = {X[idx[k]][static_cast<std::size_t>(f)], idx[k]};
        std::sort(order.begin(), order.end());
        std::fill(left.begin(), left.end(), 0.0);
        double left_w = 0.0;
        for (std::size_t k = 0; k + 1 < order.size(); ++k) {
            std::size_t i = order[k].second;
            left_w += w[i];
            left[static_cast<std::size_t>(y[i])] += w[i];
            if (order[k].first == order[k + 1].first) continue;
            double right_w = total_w - left_w;
            if (left_w <= 0.0 || right_w <= 0.0) continue;
            double gl = 1.0, gr = 1.0;
            for (int c = 0; c < n_classes; ++c) {
                double lc = left[static_cast<std::size_t>(c)] / left_w;
                double rc = (total_counts[static_cast<std::size_t>(c)] -
                             left[static_cast<std::size_t>(c)]) /
                            right_w;
                gl -= lc * lc;
                gr -= rc * rc;
            }
            double score = (left_w * gl + right_w * gr) / total_w;
            if (score < best.score - 1e-12) {
                best.found = true;
                best.feature = f;
                best.threshold = order[k].first / 2.0 + order[k + 1].first / 2.0;
                best.score = score;
            }
        }
    }
    return best;
}

// best split by summed squared error of the children around their means
inline SplitChoice best_squared_error_split(const Rows& X, const std::vector<double>& target,
                                            const std::vector<std::size_t>& idx,
                                            const std::vector<int>& features) {
    SplitChoice best;
    double total_sum = 0.0;
    for (std::size_t i : idx) total_sum += target[i];

    std::vector<std::pair<double, std::size_t>> order(idx.size());
    for (int f : features) {
        for (std::size_t k = 0; k < idx.size(); ++k)
            order[k] = {X[idx[k]][static_cast<std::size_t>(f)], idx[k]};
        std::sort(order.begin(), order.end());
        double left_sum = 0.0, left_sq = 0.0, total_sq = 0.0;
        for (std::size_t i : idx) total_sq += target[i] * target[i];
        for (std::size_t k = 0; k + 1 < order.size(); ++k) {
            std::size_t i = order[k].second;
            left_sum += target[i];
            left_sq += target[i] * target[i];
            if (order[k].first == order[k + 1].first) continue;
            auto nl = static_cast<double>(k + 1);
            auto nr = static_cast<double>(order.size() - k - 1);
            double right_sum = total_sum - left_sum;
            double right_sq = total_sq - left_sq;
            double score = (left_sq - left_sum * left_sum / nl) +
                           (right_sq - right_sum * right_sum / nr);
            if (score < best.score - 1e-12) {
                best.found = true;
                best.feature = f;
                best.threshold = order[k].first / 2.0 + order[k + 1].first / 2.0;
                best.score = score;
            }
        }
    }
    return best;
}

}  // namespace detail

struct TreeOptions {
    int max_depth = 10;
    int max_features = 0;            // per-split feature subsampling; 0 = all
    std::mt19937_64* rng = nullptr;  // required when max_features subsamples
};

// Greedy classification tree under weighted Gini. Leaves hold the weighted
// majority class; ties go to the lowest class index.
inline DecisionTree fit_classification_tree(const detail::Rows& X, const std::vector<int>& y,
                                            const std::vector<double>& weights, int n_classes,
                                            const TreeOptions& options) {
    if (X.empty()) throw DataError("cannot fit a tree on zero rows");
    if (y.size() != X.size() || weights.size() != X.size())
        throw DataError("rows, labels and weights must align");
    if (options.max_depth < 1) throw ConfigError("tree depth must be at least 1");

    DecisionTree tree;
    std::function<int(std::vector<std::size_t>&, int)> grow =
        [&](std::vector<std::size_t>& idx, int depth) -> int {
        std::vector<double> counts(static_cast<std::size_t>(n_classes), 0.0);
        for (std::size_t i : idx) counts[static_cast<std::size_t>(y[i])] += weights[i];
        int majority = static_cast<int>(
            std::max_element(counts.begin(), counts.end()) - counts.begin());
        bool pure = std::count_if(counts.begin(), counts.end(),
                                  [](double c) { return c > 0.0; }) <= 1;

        int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes[static_cast<std::size_t>(node_id)].value = majority;
        if (pure || depth >= options.max_depth || idx.size() < 2) return node_id;

        auto features = detail::sample_features(static_cast<int>(X[0].size()),
                                                options.max_features, options.rng);
        auto split = detail::best_gini_split(X, y, weights, idx, n_classes, features);
        if (!split.found) return node_id;

        std::vector<std::size_t> left_idx, right_idx;
        for (std::size_t i : idx)
            (X[i][static_cast<std::size_t>(split.feature)] <= split.threshold ? left_idx
                                                                              : right_idx)
                .push_back(i);
        idx.clear();
        idx.shrink_to_fit();
        int left = grow(left_idx, depth + 1);
        int right = grow(right_idx, depth + 1);
        auto& node = tree.nodes[static_cast<std::size_t>(node_id)];
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.left = left;
        node.right = right;
        return node_id;
    };
    std::vector<std::size_t> all(X.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    grow(all, 0);
    return tree;
}

// Greedy regression tree under squared error. The split structure follows
// the targets; leaf values come from leaf_value over the rows that land in
// the leaf (mean of targets when no functor is given), which lets boosting
// install its own leaf estimates.
inline DecisionTree fit_regression_tree(
    const detail::Rows& X, const std::vector<double>& target, const TreeOptions& options,
    const std::function<double(const std::vector<std::size_t>&)>& leaf_value = nullptr) {
    if (X.empty()) throw DataError("cannot fit a tree on zero rows");
    if (target.size() != X.size()) throw DataError("rows and targets must align");
    if (options.max_depth < 1) throw ConfigError("tree depth must be at least 1");

    DecisionTree tree;
    auto mean_target = [&](const std::vector<std::size_t>& idx) {
        double s = 0.0;
        for (std::size_t i : idx) s += target[i];
        return s / static_cast<double>(idx.size());
    };
    std::function<int(std::vector<std::size_t>&, int)> grow =
        [&](std::vector<std::size_t>& idx, int depth) -> int {
        int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        bool at_limit = depth >= options.max_depth || idx.size() < 2;
        detail::SplitChoice split;
        if (!at_limit) {
            auto features = detail::sample_features(static_cast<int>(X[0].size()),
                                                    options.max_features, options.rng);
            split = detail::best_squared_error_split(X, target, idx, features);
        }
        if (at_limit || !split.found) {
            tree.nodes[static_cast<std::size_t>(node_id)].value =
                leaf_value ? leaf_value(idx) : mean_target(idx);
            return node_id;
        }
        std::vector<std::size_t> left_idx, right_idx;
        for (std::size_t i : idx)
            (X[i][static_cast<std::size_t>(split.feature)] <= split.threshold ? left_idx
                                                                              : right_idx)
                .push_back(i);
        idx.clear();
        idx.shrink_to_fit();
        int left = grow(left_idx, depth + 1);
        int right = grow(right_idx, depth + 1);
        auto& node = tree.nodes[static_cast<std::size_t>(node_id)];
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.left = left;
        node.right = right;
        return node_id;
    };
    std::vector<std::size_t> all(X.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    grow(all, 0);
    return tree;
}

}  // namespace hsd
