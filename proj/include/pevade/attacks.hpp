#pragma once

#include <functional>
#include <vector>

#include "pevade/budget.hpp"
#include "pevade/detectors.hpp"
#include "pevade/end_to_end.hpp"
#include "pevade/manipulations.hpp"

namespace pevade::attack {

struct InfeasiblePlan : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BudgetZeroWithInsertions : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotDifferentiable : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyDonorPool : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoBenignFiles : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AttackConfig {
    std::uint64_t epsilon = 4096;
    int max_iterations = 50;
    int max_queries = 500;
    int population = 20;
    int elitism = 5;
    double crossover_prob = 0.5;
    double mutation_prob = 0.1;
    double mutation_sigma = 0.2;
    double lambda = 1e-6;
    double threshold = 0.5;
    std::uint64_t seed = 0;
};

struct TraceStep {
    int step_index;
    double score;          // best malice so far
    std::uint64_t queries_cum;
    std::uint64_t payload_bytes;  // EditCost.total of the best candidate
};

struct AttackResult {
    bool success = false;
    Bytes best_bytes;
    double best_score = 1.0;
    std::uint64_t queries_used = 0;
    int iterations_used = 0;
    std::uint64_t payload_size = 0;
    std::vector<TraceStep> trace;
    std::vector<manip::Region> edited_regions;  // editable ranges of the best candidate
};

// objective maps the malice score to the quantity being minimized
using Objective = std::function<double(double)>;

// Eq.-style budgeted hill climb over the editable bytes of the composed
// manipulation; every scored candidate is budget- and equivalence-checked.
AttackResult attack_loop(const pe::PeFile& x, const std::vector<manip::Manipulation>& ms,
                         detect::Detector& detector, const Objective& objective,
                         const AttackConfig& config);

// White-box iterative discrete gradient descent on the byte values of the
// editable region, guided by embedding-layer gradients.
AttackResult iterative_byte_gradient(const pe::PeFile& x,
                                     const std::vector<manip::Manipulation>& ms,
                                     detect::Detector& detector, const AttackConfig& config);

AttackResult single_gradient_step(const pe::PeFile& x,
                                  const std::vector<manip::Manipulation>& ms,
                                  detect::Detector& detector, const AttackConfig& config);

struct DonorSection {
    std::string source_id;
    std::string section_name;
    Bytes content;
};

struct DonorPool {
    std::vector<DonorSection> donors;
};

DonorPool harvest_donors(const std::vector<std::pair<std::string, Bytes>>& benign_files,
                         std::size_t max_sections, std::uint64_t seed);

// Black-box genetic attack injecting benign donor content into a new section.
AttackResult gamma_attack(const pe::PeFile& x, const DonorPool& donors,
                          detect::Detector& detector, const AttackConfig& config);

// payload bytes realized from a genome (donor slice prefixes, pool order)
Bytes gamma_payload(const DonorPool& donors, const std::vector<double>& genome,
                    std::uint64_t epsilon);

struct LinearScorer {
    std::vector<double> w;
    double b = 0.0;
    double loss(const std::vector<double>& x) const;
};

// closed-form l-inf additive attack on a box-constrained linear loss,
// cross-checked against per-coordinate exhaustive optimization
std::vector<double> additive_sanity_attack(const std::vector<double>& x_vec,
                                           const LinearScorer& model, double epsilon);

struct TransferRow {
    std::string target;
    int detections_before = 0;
    int detections_after = 0;
};

std::vector<TransferRow> transfer_evaluate(const std::vector<Bytes>& originals,
                                           const std::vector<Bytes>& adversarials,
                                           const std::vector<detect::Detector*>& targets);

}  // namespace pevade::attack
