#pragma once

#include <array>
#include <vector>

#include "pevade/detectors.hpp"

namespace pevade::detect {

constexpr int kHistogramBins = 256;
constexpr int kHeaderFeatures = 6;
constexpr int kFeatureCount = kHistogramBins + kHeaderFeatures;

// normalized byte histogram plus log-scaled header features; tolerant of
// non-PE input (header features fall back to zero)
std::array<double, kFeatureCount> extract_features(const Bytes& file);

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    double value = 0.0;  // leaf prediction
    int left = -1, right = -1;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;  // node 0 is the root
    double predict(const double* x) const;
};

// gradient-boosted shallow regression trees on logistic loss
class FeatureModel : public Detector {
public:
    std::vector<RegressionTree> trees;
    double base_score = 0.0;  // F_0, additive logit
    double learning_rate = 0.3;

    DetectorScore score(const Bytes& file) override;
    std::string name() const override { return "feature_model"; }
    double malice(const Bytes& file) const;
    double logit(const double* x) const;
};

struct FeatureTrainHyper {
    int n_trees = 50;
    int depth = 3;
    double learning_rate = 0.3;
    // fraction of features each tree may split on; < 1 makes seeds matter
    double colsample = 1.0;
    std::uint64_t seed = 0;
};

struct FeatureTrainReport {
    double train_accuracy = 0.0;
};

FeatureTrainReport train_feature_model(FeatureModel& model,
                                       const std::vector<LabeledSample>& dataset,
                                       const FeatureTrainHyper& hyper);

}  // namespace pevade::detect
