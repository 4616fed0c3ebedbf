#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "pevade/bytes.hpp"

namespace pevade::detect {

struct DetectorScore {
    double malice = 0.0;  // in [0, 1]
    bool malicious = false;
};

class Detector {
public:
    virtual ~Detector() = default;
    virtual DetectorScore score(const Bytes& file) = 0;
    virtual double threshold() const { return 0.5; }
    virtual std::string name() const = 0;
};

struct DegenerateDataset : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LabeledSample {
    Bytes bytes;
    int label;  // 1 = malicious
};

inline double sigmoid(double z) {
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace pevade::detect
