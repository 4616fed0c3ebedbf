#pragma once

#include <vector>

#include "pevade/detectors.hpp"

namespace pevade::detect {

struct PositionOutOfWindow : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Byte-level convolutional scorer: embedding over 257 tokens (bytes plus a
// padding token past end of file), non-overlapping width-w linear filters,
// global max pool, logistic head. Differentiable down to the embedding layer.
class EndToEndModel : public Detector {
public:
    static constexpr int kPadToken = 256;

    int input_length = 65536;
    int embed_dim = 8;
    int n_filters = 16;
    int width = 32;  // filter width == stride

    std::vector<double> embedding;    // 257 x embed_dim
    std::vector<double> filters;      // n_filters x width x embed_dim
    std::vector<double> filter_bias;  // n_filters
    std::vector<double> head_w;       // n_filters
    double head_b = 0.0;

    EndToEndModel() { allocate(); }
    void allocate();

    DetectorScore score(const Bytes& file) override { return {malice(file), malice(file) >= 0.5}; }
    std::string name() const override { return "end_to_end"; }

    double malice(const Bytes& file) const;
    // d(malice)/d(embedding vector) at each requested file offset
    std::vector<std::vector<double>> gradient(const Bytes& file,
                                              const std::vector<std::uint64_t>& positions) const;
    // malice with the embedded vector at one position overridden; finite-difference hook
    double malice_with_override(const Bytes& file, std::uint64_t position,
                                const double* vec) const;

    int token_at(const Bytes& file, std::uint64_t pos) const {
        return pos < file.size() ? file[pos] : kPadToken;
    }
    const double* embed(int token) const { return embedding.data() + std::size_t(token) * embed_dim; }

    // per-block filter activations for positions [0, n_blocks*width); exposed
    // for the incremental evaluator used by the white-box attack
    int data_blocks(const Bytes& file) const;
    void block_activations(const Bytes& file, int block, double* out) const;
    double pad_block_activation(int filter) const;
    double malice_from_pool(const std::vector<double>& pooled) const;
};

struct TrainHyper {
    int epochs = 20;
    double learning_rate = 0.5;
    int batch_size = 16;
    std::uint64_t seed = 0;
};

struct TrainReport {
    double train_accuracy = 0.0;
    double final_loss = 0.0;
};

TrainReport train_end_to_end(EndToEndModel& model, const std::vector<LabeledSample>& dataset,
                             const TrainHyper& hyper);

}  // namespace pevade::detect
