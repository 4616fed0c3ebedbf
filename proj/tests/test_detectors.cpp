#include <doctest.h>

#include <cmath>
#include <random>

#include "pevade/campaign.hpp"
#include "pevade/end_to_end.hpp"
#include "pevade/external.hpp"
#include "pevade/feature_model.hpp"
#include "pevade/pe.hpp"

using namespace pevade;
using detect::EndToEndModel;
using detect::FeatureModel;
using detect::LabeledSample;

namespace {

Bytes random_blob(std::uint64_t seed, std::size_t n) {
    std::mt19937_64 rng(seed);
    Bytes b(n);
    for (auto& c : b) c = std::uint8_t(rng());
    return b;
}

void randomize(EndToEndModel& m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 0.3);
    for (auto& v : m.embedding) v = d(rng);
    for (auto& v : m.filters) v = d(rng);
    for (auto& v : m.filter_bias) v = d(rng);
    for (auto& v : m.head_w) v = d(rng);
    m.head_b = d(rng);
}

// small synthetic corpus with the campaign markers
std::vector<LabeledSample> marker_corpus(int per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<LabeledSample> out;
    for (int i = 0; i < per_class * 2; ++i) {
        bool malicious = i % 2 == 0;
        pe::SynthSpec spec;
        spec.n_sections = 1 + int(rng() % 2);
        spec.content_seed = rng();
        Bytes b = pe::synthesize_minimal(spec);
        pe::PeFile p = pe::parse(b);
        auto& c = p.sections[0].content;
        if (malicious) {
            std::copy(campaign::kMaliciousMarker.begin(), campaign::kMaliciousMarker.end(),
                      c.begin());
        } else {
            std::copy(campaign::kBenignMarker.begin(), campaign::kBenignMarker.end(), c.begin());
            if (i % 8 == 1)
                std::copy(campaign::kMaliciousMarker.begin(), campaign::kMaliciousMarker.end(),
                          c.begin() + 64);
        }
        out.push_back({pe::serialize(p), malicious ? 1 : 0});
    }
    return out;
}

}  // namespace

TEST_CASE("zero-weight end-to-end model scores 0.5 everywhere") {
    EndToEndModel m;
    CHECK(m.malice({}) == 0.5);
    CHECK(m.malice(random_blob(1, 300)) == 0.5);
    CHECK(m.score(random_blob(2, 4096)).malice == 0.5);
}

TEST_CASE("zero-weight model has all-zero gradients") {
    EndToEndModel m;
    Bytes b = random_blob(3, 1000);
    auto g = m.gradient(b, {0, 10, 999});
    for (const auto& v : g)
        for (double x : v) CHECK(x == 0.0);
}

TEST_CASE("positions past the window are rejected") {
    EndToEndModel m;
    CHECK_THROWS_AS(m.gradient(random_blob(4, 100), {std::uint64_t(m.input_length)}),
                    detect::PositionOutOfWindow);
}

TEST_CASE("score is invariant to bytes beyond the window") {
    EndToEndModel m;
    m.input_length = 1024;
    randomize(m, 5);
    Bytes b = random_blob(6, 3000);
    double before = m.malice(b);
    for (int i = 0; i < 20; ++i) {
        b[1024 + (i * 97) % 1976] ^= 0xFF;
        CHECK(m.malice(b) == before);
    }
    for (int i = 0; i < 1024; ++i) b[i] ^= 0xA5;
    CHECK(m.malice(b) != before);  // inside the window it must matter
}

TEST_CASE("analytic gradient matches central finite differences") {
    std::mt19937_64 rng(7);
    const double h = 1e-4;
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        EndToEndModel m;
        m.input_length = 2048;
        randomize(m, rng());
        Bytes b = random_blob(rng(), 600 + rng() % 800);
        std::uint64_t pos = rng() % b.size();
        auto g = m.gradient(b, {pos})[0];
        std::vector<double> e(m.embed(b[pos]), m.embed(b[pos]) + m.embed_dim);
        for (int d = 0; d < m.embed_dim; ++d) {
            std::vector<double> hi = e, lo = e;
            hi[d] += h;
            lo[d] -= h;
            double fd = (m.malice_with_override(b, pos, hi.data()) -
                         m.malice_with_override(b, pos, lo.data())) /
                        (2 * h);
            double denom = std::max(std::abs(fd), std::abs(g[d]));
            if (denom < 1e-10) continue;  // both effectively zero
            CHECK(std::abs(fd - g[d]) / denom < 1e-4);
            ++checked;
        }
    }
    CHECK(checked > 100);  // the check must actually exercise nonzero gradients
}

TEST_CASE("gradient direction predicts score change") {
    EndToEndModel m;
    m.input_length = 2048;
    randomize(m, 11);
    Bytes b = random_blob(12, 900);
    auto g = m.gradient(b, {100})[0];
    std::vector<double> e(m.embed(b[100]), m.embed(b[100]) + m.embed_dim);
    double step = 1e-3;
    std::vector<double> up = e;
    for (int d = 0; d < m.embed_dim; ++d) up[d] += step * g[d];
    CHECK(m.malice_with_override(b, 100, up.data()) >= m.malice(b) - 1e-12);
}

TEST_CASE("end-to-end training separates the marker corpus") {
    auto data = marker_corpus(30, 100);
    EndToEndModel m;
    detect::TrainHyper hyper;
    hyper.epochs = 40;
    hyper.seed = 1;
    auto rep = detect::train_end_to_end(m, data, hyper);
    CHECK(rep.train_accuracy >= 0.9);
}

TEST_CASE("end-to-end training is deterministic") {
    auto data = marker_corpus(8, 200);
    detect::TrainHyper hyper;
    hyper.epochs = 4;
    hyper.seed = 9;
    EndToEndModel a, b;
    detect::train_end_to_end(a, data, hyper);
    detect::train_end_to_end(b, data, hyper);
    CHECK(a.embedding == b.embedding);
    CHECK(a.filters == b.filters);
    CHECK(a.head_w == b.head_w);
    CHECK(a.head_b == b.head_b);
}

TEST_CASE("single-class training is rejected") {
    auto data = marker_corpus(4, 300);
    std::vector<LabeledSample> benign_only;
    for (auto& s : data)
        if (s.label == 0) benign_only.push_back(s);
    EndToEndModel m;
    CHECK_THROWS_AS(detect::train_end_to_end(m, benign_only, {}), detect::DegenerateDataset);
    FeatureModel fm;
    CHECK_THROWS_AS(detect::train_feature_model(fm, benign_only, {}), detect::DegenerateDataset);
}

TEST_CASE("empty tree ensemble scores 0.5") {
    FeatureModel m;
    CHECK(m.malice(random_blob(13, 500)) == 0.5);
    auto data = marker_corpus(4, 400);
    detect::FeatureTrainHyper hyper;
    hyper.n_trees = 0;
    detect::train_feature_model(m, data, hyper);
    CHECK(m.malice(data[0].bytes) == 0.5);
}

TEST_CASE("one stump separates single-feature data") {
    // class decided entirely by the frequency of byte 0xFF
    std::vector<LabeledSample> data;
    std::mt19937_64 rng(14);
    for (int i = 0; i < 40; ++i) {
        Bytes b(256);
        for (auto& c : b) c = std::uint8_t(rng() % 0x80);
        if (i % 2) std::fill(b.begin(), b.begin() + 64, 0xFF);
        data.push_back({b, i % 2});
    }
    FeatureModel m;
    detect::FeatureTrainHyper hyper;
    hyper.n_trees = 1;
    hyper.depth = 1;
    auto rep = detect::train_feature_model(m, data, hyper);
    CHECK(rep.train_accuracy == 1.0);
    REQUIRE(m.trees.size() == 1);
    CHECK(m.trees[0].nodes[0].feature == 0xFF);
}

TEST_CASE("feature model training separates the marker corpus") {
    auto data = marker_corpus(30, 500);
    FeatureModel m;
    auto rep = detect::train_feature_model(m, data, {});
    CHECK(rep.train_accuracy >= 0.95);
    for (const auto& s : data) {
        double v = m.malice(s.bytes);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("boosted trees respect depth and count limits") {
    auto data = marker_corpus(10, 600);
    FeatureModel m;
    detect::FeatureTrainHyper hyper;
    hyper.n_trees = 7;
    hyper.depth = 2;
    detect::train_feature_model(m, data, hyper);
    CHECK(m.trees.size() == 7);
    for (const auto& t : m.trees) CHECK(t.nodes.size() <= 7);  // depth-2 tree
}

TEST_CASE("subprocess adapter parses the echoed score") {
    auto d = detect::ExternalDetector::subprocess({"/bin/sh", "-c", "echo 0.73"});
    Bytes b = random_blob(15, 64);
    auto s = d.score(b);
    CHECK(s.malice == doctest::Approx(0.73));
    CHECK(s.malicious);
    CHECK(d.query_count() == 1);
    d.score(b);
    CHECK(d.query_count() == 2);
}

TEST_CASE("subprocess adapter reads the candidate file") {
    auto d = detect::ExternalDetector::subprocess(
        {"/bin/sh", "-c", "test -s \"$0\" && echo 0.25 || echo 1.0"});
    CHECK(d.score(random_blob(16, 32)).malice == doctest::Approx(0.25));
}

TEST_CASE("subprocess timeout raises ExternalTimeout") {
    auto d = detect::ExternalDetector::subprocess({"/bin/sh", "-c", "sleep 10"}, 200);
    CHECK_THROWS_AS(d.score({}), detect::ExternalTimeout);
    CHECK(d.query_count() == 1);  // the query was made, just never answered
}

TEST_CASE("malformed subprocess replies raise ExternalProtocol") {
    auto bad = detect::ExternalDetector::subprocess({"/bin/sh", "-c", "echo not-a-number"});
    CHECK_THROWS_AS(bad.score({}), detect::ExternalProtocol);
    auto range = detect::ExternalDetector::subprocess({"/bin/sh", "-c", "echo 1.5"});
    CHECK_THROWS_AS(range.score({}), detect::ExternalProtocol);
    auto fail = detect::ExternalDetector::subprocess({"/bin/sh", "-c", "echo 0.5; exit 3"});
    CHECK_THROWS_AS(fail.score({}), detect::ExternalProtocol);
}
