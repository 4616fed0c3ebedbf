#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pevade/campaign.hpp"
#include "pevade/external.hpp"

namespace {

int verbosity() {
    const char* v = std::getenv("PEVADE_LOG");
    return v ? std::atoi(v) : 0;
}

void log_line(const std::string& msg) {
    if (verbosity() > 0) std::cerr << "[pevade] " << msg << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    using namespace pevade;

    CLI::App app{"adversarial-robustness toolkit for PE malware detectors"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", adv_dir, inspect_file;
    int jobs = 1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int n_benign = 200, n_malicious = 200;

    auto add_common = [&](CLI::App* cmd, bool with_config) {
        if (with_config) cmd->add_option("--config", config_path, "config file")->required();
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--jobs", jobs, "parallel jobs")->check(CLI::PositiveNumber);
        cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
            seed_set = true;
        });
    };

    auto* synth = app.add_subcommand("synth", "synthesize a labeled toy corpus");
    synth->add_option("--benign", n_benign, "benign file count");
    synth->add_option("--malicious", n_malicious, "malicious file count");
    add_common(synth, false);

    auto* train = app.add_subcommand("train", "train a built-in detector");
    add_common(train, true);

    auto* attack_cmd = app.add_subcommand("attack", "run an evasion campaign");
    add_common(attack_cmd, true);

    auto* transfer = app.add_subcommand("transfer", "evaluate adversarials on another detector");
    transfer->add_option("--adv", adv_dir, "attack output directory")->required();
    add_common(transfer, true);

    auto* inspect = app.add_subcommand("inspect", "dump the region map of a PE file");
    inspect->add_option("file", inspect_file, "file to inspect")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            auto s = campaign::cmd_synth(n_benign, n_malicious, out_dir, seed);
            std::cout << "wrote " << s.benign_written << " benign + " << s.malicious_written
                      << " malicious files, manifest " << s.manifest.string() << "\n";
        } else if (train->parsed()) {
            auto cfg = campaign::Config::load(config_path);
            auto s = campaign::cmd_train(cfg, out_dir,
                                         seed_set ? std::optional<std::uint64_t>(seed)
                                                  : std::nullopt);
            std::printf("training accuracy %.4f, model %s\n", s.accuracy,
                        s.model_path.string().c_str());
        } else if (attack_cmd->parsed()) {
            auto cfg = campaign::Config::load(config_path);
            log_line("starting campaign with " + std::to_string(jobs) + " jobs");
            auto s = campaign::cmd_attack(cfg, out_dir, jobs,
                                          seed_set ? std::optional<std::uint64_t>(seed)
                                                   : std::nullopt);
            std::printf("samples %d, detected before %d, after %d (rate %.2f -> %.2f)\n",
                        s.samples, s.detected_before, s.detected_after,
                        double(s.detected_before) / s.samples,
                        double(s.detected_after) / s.samples);
            std::cout << "csv: " << s.csv.string() << "\n";
        } else if (transfer->parsed()) {
            auto cfg = campaign::Config::load(config_path);
            auto s = campaign::cmd_transfer(cfg, adv_dir, out_dir);
            for (const auto& row : s.rows)
                std::cout << row.target << ": " << row.detections_before << " -> "
                          << row.detections_after << "\n";
            std::cout << "csv: " << s.csv.string() << "\n";
        } else if (inspect->parsed()) {
            std::cout << campaign::inspect_dump(inspect_file);
        }
    } catch (const campaign::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const detect::ExternalTimeout& e) {
        std::cerr << "detector transport error: " << e.what() << "\n";
        return 3;
    } catch (const detect::ExternalProtocol& e) {
        std::cerr << "detector transport error: " << e.what() << "\n";
        return 3;
    } catch (const campaign::IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
