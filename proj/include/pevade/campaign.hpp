#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pevade/attacks.hpp"
#include "pevade/detectors.hpp"
#include "pevade/end_to_end.hpp"
#include "pevade/feature_model.hpp"

namespace pevade::campaign {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// line-oriented `section.key = value` config; unknown keys are rejected
struct Config {
    std::map<std::string, std::string> values;

    static Config from_string(const std::string& text);
    static Config load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values.count(key) != 0; }
    std::string get(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_real(const std::string& key, double fallback) const;
};

// fixed 64-byte content markers that make the synthetic classes learnable
extern const std::array<std::uint8_t, 64> kMaliciousMarker;
extern const std::array<std::uint8_t, 64> kBenignMarker;

struct SynthSummary {
    int benign_written = 0;
    int malicious_written = 0;
    std::filesystem::path manifest;
};

SynthSummary cmd_synth(int n_benign, int n_malicious, const std::filesystem::path& out_dir,
                       std::uint64_t seed);

// PEVD model container
void save_model(const detect::EndToEndModel& m, const std::filesystem::path& path);
void save_model(const detect::FeatureModel& m, const std::filesystem::path& path);
std::unique_ptr<detect::Detector> load_model(const std::filesystem::path& path);

// detector described by config keys under `prefix` (type/model/command/url)
std::unique_ptr<detect::Detector> make_detector(const Config& cfg, const std::string& prefix);

struct TrainSummary {
    double accuracy = 0.0;
    std::filesystem::path model_path;
};

TrainSummary cmd_train(const Config& cfg, const std::filesystem::path& out_dir,
                       std::optional<std::uint64_t> seed_override);

struct AttackSummary {
    int samples = 0;
    int detected_before = 0;
    int detected_after = 0;
    std::filesystem::path csv;
};

AttackSummary cmd_attack(const Config& cfg, const std::filesystem::path& out_dir, int jobs,
                         std::optional<std::uint64_t> seed_override);

struct TransferSummary {
    std::filesystem::path csv;
    std::vector<attack::TransferRow> rows;
};

TransferSummary cmd_transfer(const Config& cfg, const std::filesystem::path& adversarial_dir,
                             const std::filesystem::path& out_dir);

// region map of one file; tags adversarial ranges when a sibling .prov exists
std::string inspect_dump(const std::filesystem::path& file);

// shared by campaign and tests
std::vector<detect::LabeledSample> load_corpus(const std::filesystem::path& manifest);
std::vector<manip::Manipulation> parse_manipulations(const std::string& text);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Bytes& content);

}  // namespace pevade::campaign
