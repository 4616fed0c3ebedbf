#include "pevade/end_to_end.hpp"

#include <algorithm>
#include <random>

namespace pevade::detect {

void EndToEndModel::allocate() {
    embedding.assign(257 * std::size_t(embed_dim), 0.0);
    filters.assign(std::size_t(n_filters) * width * embed_dim, 0.0);
    filter_bias.assign(n_filters, 0.0);
    head_w.assign(n_filters, 0.0);
    head_b = 0.0;
}

int EndToEndModel::data_blocks(const Bytes& file) const {
    std::uint64_t used = std::min<std::uint64_t>(file.size(), input_length);
    return int((used + width - 1) / width);
}

void EndToEndModel::block_activations(const Bytes& file, int block, double* out) const {
    for (int j = 0; j < n_filters; ++j) out[j] = filter_bias[j];
    std::uint64_t base = std::uint64_t(block) * width;
    for (int t = 0; t < width; ++t) {
        const double* e = embed(token_at(file, base + t));
        for (int j = 0; j < n_filters; ++j) {
            const double* w = filters.data() + (std::size_t(j) * width + t) * embed_dim;
            double acc = 0.0;
            for (int d = 0; d < embed_dim; ++d) acc += w[d] * e[d];
            out[j] += acc;
        }
    }
}

double EndToEndModel::pad_block_activation(int filter) const {
    const double* e = embed(kPadToken);
    double act = filter_bias[filter];
    for (int t = 0; t < width; ++t) {
        const double* w = filters.data() + (std::size_t(filter) * width + t) * embed_dim;
        for (int d = 0; d < embed_dim; ++d) act += w[d] * e[d];
    }
    return act;
}

double EndToEndModel::malice_from_pool(const std::vector<double>& pooled) const {
    double z = head_b;
    for (int j = 0; j < n_filters; ++j) z += head_w[j] * pooled[j];
    return sigmoid(z);
}

namespace {

// global max pool over all blocks in the window; pad blocks share one activation
struct Pooled {
    std::vector<double> value;   // per filter
    std::vector<int> arg_block;  // per filter, winning block (first on ties)
};

Pooled pool(const EndToEndModel& m, const Bytes& file) {
    int n_blocks = m.input_length / m.width;
    int n_data = m.data_blocks(file);
    Pooled p;
    p.value.assign(m.n_filters, -1e300);
    p.arg_block.assign(m.n_filters, -1);
    std::vector<double> act(m.n_filters);
    for (int b = 0; b < n_data; ++b) {
        m.block_activations(file, b, act.data());
        for (int j = 0; j < m.n_filters; ++j)
            if (act[j] > p.value[j]) {
                p.value[j] = act[j];
                p.arg_block[j] = b;
            }
    }
    if (n_data < n_blocks) {
        for (int j = 0; j < m.n_filters; ++j) {
            double a = m.pad_block_activation(j);
            if (a > p.value[j]) {
                p.value[j] = a;
                p.arg_block[j] = n_data;  // representative pad block
            }
        }
    }
    return p;
}

}  // namespace

double EndToEndModel::malice(const Bytes& file) const {
    return malice_from_pool(pool(*this, file).value);
}

std::vector<std::vector<double>> EndToEndModel::gradient(
    const Bytes& file, const std::vector<std::uint64_t>& positions) const {
    for (auto p : positions)
        if (p >= std::uint64_t(input_length))
            throw PositionOutOfWindow("position " + std::to_string(p) + " outside model window");
    Pooled pl = pool(*this, file);
    double y = malice_from_pool(pl.value);
    double dz = y * (1.0 - y);  // d sigmoid
    std::vector<std::vector<double>> out;
    out.reserve(positions.size());
    for (auto p : positions) {
        int b = int(p / width), t = int(p % width);
        std::vector<double> g(embed_dim, 0.0);
        for (int j = 0; j < n_filters; ++j) {
            if (pl.arg_block[j] != b) continue;
            const double* w = filters.data() + (std::size_t(j) * width + t) * embed_dim;
            double c = dz * head_w[j];
            for (int d = 0; d < embed_dim; ++d) g[d] += c * w[d];
        }
        out.push_back(std::move(g));
    }
    return out;
}

double EndToEndModel::malice_with_override(const Bytes& file, std::uint64_t position,
                                           const double* vec) const {
    if (position >= std::uint64_t(input_length))
        throw PositionOutOfWindow("override position outside model window");
    int ob = int(position / width), t = int(position % width);
    int n_blocks = input_length / width;
    int n_data = std::max(data_blocks(file), ob + 1);
    std::vector<double> pooled(n_filters, -1e300);
    std::vector<double> act(n_filters);
    for (int b = 0; b < n_data; ++b) {
        block_activations(file, b, act.data());
        if (b == ob) {
            // swap in the overridden embedding vector at offset t
            const double* e = embed(token_at(file, position));
            for (int j = 0; j < n_filters; ++j) {
                const double* w = filters.data() + (std::size_t(j) * width + t) * embed_dim;
                for (int d = 0; d < embed_dim; ++d) act[j] += w[d] * (vec[d] - e[d]);
            }
        }
        for (int j = 0; j < n_filters; ++j) pooled[j] = std::max(pooled[j], act[j]);
    }
    if (n_data < n_blocks)
        for (int j = 0; j < n_filters; ++j)
            pooled[j] = std::max(pooled[j], pad_block_activation(j));
    return malice_from_pool(pooled);
}

TrainReport train_end_to_end(EndToEndModel& model, const std::vector<LabeledSample>& dataset,
                             const TrainHyper& hyper) {
    bool has_pos = false, has_neg = false;
    for (const auto& s : dataset) (s.label ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg)
        throw DegenerateDataset("training set must contain both classes");

    std::mt19937_64 rng(hyper.seed);
    std::normal_distribution<double> init(0.0, 0.05);
    model.allocate();
    for (auto& v : model.embedding) v = init(rng);
    for (auto& v : model.filters) v = init(rng);
    for (auto& v : model.head_w) v = init(rng);

    const int ed = model.embed_dim, nf = model.n_filters, w = model.width;
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainReport report;
    std::vector<double> act(nf);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            std::size_t stop = std::min(order.size(), start + std::size_t(hyper.batch_size));
            // accumulate gradients over the minibatch
            std::vector<double> g_emb(model.embedding.size(), 0.0);
            std::vector<double> g_filt(model.filters.size(), 0.0);
            std::vector<double> g_fb(nf, 0.0), g_hw(nf, 0.0);
            double g_hb = 0.0;
            for (std::size_t i = start; i < stop; ++i) {
                const auto& sample = dataset[order[i]];
                int n_blocks = model.input_length / w;
                int n_data = model.data_blocks(sample.bytes);
                std::vector<double> pooled(nf, -1e300);
                std::vector<int> argb(nf, -1);
                for (int b = 0; b < n_data; ++b) {
                    model.block_activations(sample.bytes, b, act.data());
                    for (int j = 0; j < nf; ++j)
                        if (act[j] > pooled[j]) { pooled[j] = act[j]; argb[j] = b; }
                }
                if (n_data < n_blocks)
                    for (int j = 0; j < nf; ++j) {
                        double a = model.pad_block_activation(j);
                        if (a > pooled[j]) { pooled[j] = a; argb[j] = n_data; }
                    }
                double y = model.malice_from_pool(pooled);
                double t = double(sample.label);
                loss_sum += t > 0.5 ? -std::log(std::max(y, 1e-12))
                                    : -std::log(std::max(1.0 - y, 1e-12));
                double dz = y - t;
                g_hb += dz;
                for (int j = 0; j < nf; ++j) {
                    g_hw[j] += dz * pooled[j];
                    double ga = dz * model.head_w[j];
                    g_fb[j] += ga;
                    std::uint64_t base = std::uint64_t(argb[j]) * w;
                    for (int tt = 0; tt < w; ++tt) {
                        int tok = argb[j] >= n_data ? EndToEndModel::kPadToken
                                                    : model.token_at(sample.bytes, base + tt);
                        const double* e = model.embed(tok);
                        double* gf = g_filt.data() + (std::size_t(j) * w + tt) * ed;
                        double* ge = g_emb.data() + std::size_t(tok) * ed;
                        const double* fw =
                            model.filters.data() + (std::size_t(j) * w + tt) * ed;
                        for (int d = 0; d < ed; ++d) {
                            gf[d] += ga * e[d];
                            ge[d] += ga * fw[d];
                        }
                    }
                }
            }
            double lr = hyper.learning_rate / double(stop - start);
            for (std::size_t k = 0; k < model.embedding.size(); ++k)
                model.embedding[k] -= lr * g_emb[k];
            for (std::size_t k = 0; k < model.filters.size(); ++k)
                model.filters[k] -= lr * g_filt[k];
            for (int j = 0; j < nf; ++j) {
                model.filter_bias[j] -= lr * g_fb[j];
                model.head_w[j] -= lr * g_hw[j];
            }
            model.head_b -= lr * g_hb;
        }
        report.final_loss = loss_sum / double(dataset.size());
    }
    int correct = 0;
    for (const auto& s : dataset)
        correct += (model.malice(s.bytes) >= 0.5) == (s.label == 1);
    report.train_accuracy = double(correct) / double(dataset.size());
    return report;
}

}  // namespace pevade::detect
