#include "pevade/feature_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pevade/pe.hpp"

namespace pevade::detect {

std::array<double, kFeatureCount> extract_features(const Bytes& file) {
    std::array<double, kFeatureCount> x{};
    if (!file.empty()) {
        std::array<std::uint64_t, 256> counts{};
        for (auto b : file) ++counts[b];
        for (int i = 0; i < 256; ++i) x[i] = double(counts[i]) / double(file.size());
    }
    auto log1 = [](double v) { return std::log1p(v); };
    x[kHistogramBins + 4] = log1(double(file.size()));
    try {
        pe::PeFile p = pe::parse(file);
        std::uint64_t size_of_code = 0;
        for (const auto& s : p.sections)
            if (s.entry.characteristics & 0x20) size_of_code += s.entry.size_of_raw_data;
        std::size_t import_count = 0;
        for (const auto& d : p.imports.descriptors) import_count += d.functions.size();
        x[kHistogramBins + 0] = log1(double(p.sections.size()));
        x[kHistogramBins + 1] = log1(double(size_of_code));
        x[kHistogramBins + 2] = log1(double(p.optional.address_of_entry_point()));
        x[kHistogramBins + 3] = log1(double(import_count));
        x[kHistogramBins + 5] = log1(double(p.overlay.size()));
    } catch (const ParseError&) {
        // non-PE input: histogram and length only
    }
    return x;
}

double RegressionTree::predict(const double* x) const {
    int n = 0;
    while (nodes[n].feature >= 0)
        n = x[nodes[n].feature] <= nodes[n].threshold ? nodes[n].left : nodes[n].right;
    return nodes[n].value;
}

double FeatureModel::logit(const double* x) const {
    double f = base_score;
    for (const auto& t : trees) f += learning_rate * t.predict(x);
    return f;
}

double FeatureModel::malice(const Bytes& file) const {
    auto x = extract_features(file);
    return sigmoid(logit(x.data()));
}

DetectorScore FeatureModel::score(const Bytes& file) {
    double m = malice(file);
    return {m, m >= threshold()};
}

namespace {

struct SplitResult {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

// exact least-squares split search over the allowed features and every midpoint
SplitResult best_split(const std::vector<std::array<double, kFeatureCount>>& X,
                       const std::vector<double>& residual,
                       const std::vector<int>& idx, const std::vector<int>& features) {
    SplitResult best;
    double total = 0.0;
    for (int i : idx) total += residual[i];
    std::vector<int> order(idx);
    for (int f : features) {
        std::sort(order.begin(), order.end(),
                  [&](int a, int b) { return X[a][f] < X[b][f]; });
        double left_sum = 0.0;
        for (std::size_t k = 0; k + 1 < order.size(); ++k) {
            left_sum += residual[order[k]];
            double lo = X[order[k]][f], hi = X[order[k + 1]][f];
            if (lo == hi) continue;
            double nl = double(k + 1), nr = double(order.size() - k - 1);
            double right_sum = total - left_sum;
            double gain = left_sum * left_sum / nl + right_sum * right_sum / nr -
                          total * total / double(order.size());
            if (!best.found || gain > best.gain) {
                best = {true, f, (lo + hi) / 2.0, gain};
            }
        }
    }
    return best;
}

void grow(RegressionTree& tree, int node,
          const std::vector<std::array<double, kFeatureCount>>& X,
          const std::vector<double>& residual, const std::vector<double>& hessian,
          const std::vector<int>& idx, const std::vector<int>& features, int depth_left) {
    double rs = 0.0, hs = 0.0;
    for (int i : idx) {
        rs += residual[i];
        hs += hessian[i];
    }
    auto make_leaf = [&] {
        tree.nodes[node].feature = -1;
        // Newton step for logistic loss
        tree.nodes[node].value = hs > 1e-12 ? rs / hs : 0.0;
    };
    if (depth_left == 0 || idx.size() < 2) {
        make_leaf();
        return;
    }
    SplitResult s = best_split(X, residual, idx, features);
    if (!s.found || s.gain <= 1e-12) {
        make_leaf();
        return;
    }
    std::vector<int> li, ri;
    for (int i : idx)
        (X[i][s.feature] <= s.threshold ? li : ri).push_back(i);
    tree.nodes[node].feature = s.feature;
    tree.nodes[node].threshold = s.threshold;
    tree.nodes[node].left = int(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[node].right = int(tree.nodes.size());
    tree.nodes.emplace_back();
    grow(tree, tree.nodes[node].left, X, residual, hessian, li, features, depth_left - 1);
    grow(tree, tree.nodes[node].right, X, residual, hessian, ri, features, depth_left - 1);
}

}  // namespace

FeatureTrainReport train_feature_model(FeatureModel& model,
                                       const std::vector<LabeledSample>& dataset,
                                       const FeatureTrainHyper& hyper) {
    bool has_pos = false, has_neg = false;
    for (const auto& s : dataset) (s.label ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg)
        throw DegenerateDataset("training set must contain both classes");

    std::vector<std::array<double, kFeatureCount>> X;
    X.reserve(dataset.size());
    for (const auto& s : dataset) X.push_back(extract_features(s.bytes));

    model.trees.clear();
    model.base_score = 0.0;
    model.learning_rate = hyper.learning_rate;

    std::vector<double> f(dataset.size(), model.base_score);
    std::vector<int> all(dataset.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> all_features(kFeatureCount);
    std::iota(all_features.begin(), all_features.end(), 0);
    std::mt19937_64 rng(hyper.seed);
    int n_feat = std::max(1, int(hyper.colsample * kFeatureCount));
    for (int t = 0; t < hyper.n_trees; ++t) {
        std::vector<double> residual(dataset.size()), hessian(dataset.size());
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            double p = sigmoid(f[i]);
            residual[i] = double(dataset[i].label) - p;
            hessian[i] = std::max(p * (1.0 - p), 1e-12);
        }
        std::vector<int> features = all_features;
        if (n_feat < kFeatureCount) {
            std::shuffle(features.begin(), features.end(), rng);
            features.resize(n_feat);
            std::sort(features.begin(), features.end());
        }
        RegressionTree tree;
        tree.nodes.emplace_back();
        grow(tree, 0, X, residual, hessian, all, features, hyper.depth);
        for (std::size_t i = 0; i < dataset.size(); ++i)
            f[i] += hyper.learning_rate * tree.predict(X[i].data());
        model.trees.push_back(std::move(tree));
    }

    int correct = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        correct += (sigmoid(f[i]) >= 0.5) == (dataset[i].label == 1);
    FeatureTrainReport report;
    report.train_accuracy = double(correct) / double(dataset.size());
    return report;
}

}  // namespace pevade::detect
