#pragma once

#include <atomic>
#include <mutex>
#include <vector>

#include "pevade/detectors.hpp"

namespace pevade::detect {

struct ExternalTimeout : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ExternalProtocol : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Scores files by handing them to another process or an HTTP endpoint.
// Subprocess protocol: argv = command... plus the candidate file path, one
// decimal in [0,1] on stdout, exit 0. HTTP protocol: POST raw bytes, reply
// {"score": x}.
class ExternalDetector : public Detector {
public:
    enum class Transport { Subprocess, Http };

    static ExternalDetector subprocess(std::vector<std::string> argv, int timeout_ms = 10000);
    static ExternalDetector http(std::string url, int timeout_ms = 10000);

    ExternalDetector() = default;
    ExternalDetector(ExternalDetector&& o) noexcept
        : transport_(o.transport_),
          argv_(std::move(o.argv_)),
          url_(std::move(o.url_)),
          timeout_ms_(o.timeout_ms_),
          query_counter_(o.query_counter_.load()) {}

    DetectorScore score(const Bytes& file) override;
    std::string name() const override { return "external"; }

    std::uint64_t query_count() const { return query_counter_.load(); }

private:
    Transport transport_ = Transport::Subprocess;
    std::vector<std::string> argv_;
    std::string url_;
    int timeout_ms_ = 10000;
    std::atomic<std::uint64_t> query_counter_{0};
    std::mutex call_mutex_;  // one in-flight call per instance

    double score_subprocess(const Bytes& file);
    double score_http(const Bytes& file);
};

}  // namespace pevade::detect
