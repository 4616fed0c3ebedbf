#include "pevade/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pevade/oracle.hpp"

namespace pevade::attack {

namespace {

bool has_api_injection(const std::vector<manip::Manipulation>& ms) {
    for (const auto& m : ms)
        if (m.kind == manip::Kind::ApiInjection) return true;
    return false;
}

manip::EditablePlan make_plan(const pe::PeFile& x, const std::vector<manip::Manipulation>& ms) {
    try {
        return manip::compose(x, ms);
    } catch (const PlanError& e) {
        throw InfeasiblePlan(std::string("manipulation not applicable: ") + e.what());
    }
}

// flattened view of the editable region for byte-level search
struct EditView {
    std::vector<std::uint64_t> offsets;  // output coordinates, delta order
    std::vector<bool> inserted;
    std::vector<std::uint8_t> original;  // aligned original byte; 0 for inserted
};

EditView edit_view(const manip::EditablePlan& plan, const Bytes& orig) {
    EditView v;
    for (const auto& r : plan.editable)
        for (std::uint64_t i = 0; i < r.length; ++i) {
            std::uint64_t off = r.offset + i;
            v.offsets.push_back(off);
            bool ins = plan.is_inserted(off);
            v.inserted.push_back(ins);
            v.original.push_back(ins ? 0 : orig[plan.to_original(off)]);
        }
    return v;
}

Bytes identity_delta(const EditView& v) {
    return Bytes(v.original.begin(), v.original.end());
}

// cost of a delta given the flattened view; equals budget::edit_cost
std::uint64_t quick_cost(const manip::EditablePlan& plan, const EditView& v, const Bytes& delta) {
    std::uint64_t subs = plan.structural_substitutions;
    for (std::size_t i = 0; i < delta.size(); ++i)
        if (!v.inserted[i] && delta[i] != v.original[i]) ++subs;
    return plan.structural_insertions + subs;
}

void assert_candidate(const Bytes& orig, const Bytes& candidate,
                      const manip::EditablePlan& plan, const Bytes& delta,
                      const AttackConfig& cfg, bool api_flag) {
    auto cost = budget::edit_cost(plan, delta, orig);
    if (!budget::within_budget(cost, cfg.epsilon))
        throw InvariantViolation("attack produced a candidate over budget");
    auto rep = oracle::check_equivalence(orig, candidate, api_flag);
    if (!rep.equivalent())
        throw InvariantViolation("attack produced a non-equivalent candidate: " +
                                 rep.violations[0].detail);
}

void check_structural_budget(const manip::EditablePlan& plan, const AttackConfig& cfg) {
    if (plan.structural_insertions + plan.structural_substitutions > cfg.epsilon)
        throw BudgetZeroWithInsertions(
            "budget " + std::to_string(cfg.epsilon) + " below the " +
            std::to_string(plan.structural_insertions + plan.structural_substitutions) +
            " bytes the manipulation itself changes");
}

}  // namespace

AttackResult attack_loop(const pe::PeFile& x, const std::vector<manip::Manipulation>& ms,
                         detect::Detector& detector, const Objective& objective,
                         const AttackConfig& cfg) {
    auto plan = make_plan(x, ms);
    check_structural_budget(plan, cfg);
    bool api_flag = has_api_injection(ms);
    Bytes orig = pe::serialize(x);
    EditView view = edit_view(plan, orig);

    AttackResult result;
    result.edited_regions = plan.editable;
    std::mt19937_64 rng(cfg.seed);
    Bytes delta = identity_delta(view);
    Bytes current = manip::apply(plan, delta);
    assert_candidate(orig, current, plan, delta, cfg, api_flag);
    double malice = detector.score(current).malice;
    double best_obj = objective(malice);
    result.queries_used = 1;
    result.best_bytes = current;
    result.best_score = malice;
    result.payload_size = budget::edit_cost(plan, delta, orig).total();
    result.trace.push_back({0, malice, result.queries_used, result.payload_size});

    int idle = 0;
    int step = 0;
    while (result.queries_used < std::uint64_t(cfg.max_queries) &&
           result.best_score >= cfg.threshold && idle < 50 && !view.offsets.empty()) {
        Bytes trial = delta;
        int n_mut = 1 + int(rng() % 16);
        std::vector<std::size_t> touched;
        for (int i = 0; i < n_mut; ++i) {
            std::size_t p = rng() % trial.size();
            trial[p] = std::uint8_t(rng());
            touched.push_back(p);
        }
        // repair over-budget trials by undoing substitutions
        std::uint64_t cost = quick_cost(plan, view, trial);
        for (std::size_t p : touched) {
            if (cost <= cfg.epsilon) break;
            if (!view.inserted[p] && trial[p] != view.original[p]) {
                trial[p] = view.original[p];
                --cost;
            }
        }
        if (trial == delta) {
            ++idle;
            continue;
        }
        idle = 0;
        Bytes candidate = manip::apply(plan, trial);
        assert_candidate(orig, candidate, plan, trial, cfg, api_flag);
        double m = detector.score(candidate).malice;
        ++result.queries_used;
        ++step;
        if (objective(m) < best_obj) {
            best_obj = objective(m);
            delta = std::move(trial);
            result.best_bytes = std::move(candidate);
            result.best_score = m;
            result.payload_size = quick_cost(plan, view, delta);
        }
        result.trace.push_back({step, result.best_score, result.queries_used, result.payload_size});
    }
    result.iterations_used = step;
    result.success = result.best_score < cfg.threshold;
    return result;
}

namespace {

struct ByteChange {
    std::size_t delta_index;
    std::uint8_t new_byte;
    double alignment;
};

}  // namespace

AttackResult iterative_byte_gradient(const pe::PeFile& x,
                                     const std::vector<manip::Manipulation>& ms,
                                     detect::Detector& detector, const AttackConfig& cfg) {
    auto* model = dynamic_cast<detect::EndToEndModel*>(&detector);
    if (!model)
        throw NotDifferentiable("detector '" + detector.name() + "' exposes no gradients");
    auto plan = make_plan(x, ms);
    check_structural_budget(plan, cfg);
    bool api_flag = has_api_injection(ms);
    Bytes orig = pe::serialize(x);
    EditView view = edit_view(plan, orig);

    // positions the model can see at all
    std::vector<std::size_t> visible;
    for (std::size_t i = 0; i < view.offsets.size(); ++i)
        if (view.offsets[i] < std::uint64_t(model->input_length)) visible.push_back(i);
    if (visible.empty() && !view.offsets.empty())
        throw InfeasiblePlan("editable region lies entirely outside the model window");

    std::mt19937_64 rng(cfg.seed);
    Bytes delta = identity_delta(view);
    for (std::size_t i = 0; i < delta.size(); ++i)
        if (view.inserted[i]) delta[i] = std::uint8_t(rng());

    AttackResult result;
    result.edited_regions = plan.editable;
    Bytes current = manip::apply(plan, delta);
    assert_candidate(orig, current, plan, delta, cfg, api_flag);
    double best = model->malice(current);
    result.queries_used = 1;
    result.best_bytes = current;
    result.best_score = best;
    result.payload_size = quick_cost(plan, view, delta);
    result.trace.push_back({0, best, result.queries_used, result.payload_size});

    const double tau = 1e-12;
    const int ed = model->embed_dim;
    for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
        if (best < cfg.threshold) break;
        result.iterations_used = iter;

        std::vector<std::uint64_t> positions;
        positions.reserve(visible.size());
        for (std::size_t i : visible) positions.push_back(view.offsets[i]);
        auto grads = model->gradient(current, positions);

        std::vector<ByteChange> changes;
        for (std::size_t k = 0; k < visible.size(); ++k) {
            const auto& g = grads[k];
            double gn = 0.0;
            for (double v : g) gn += v * v;
            if (gn == 0.0) continue;
            std::size_t di = visible[k];
            const double* e_cur = model->embed(delta[di]);
            double best_align = 0.0;
            int best_z = delta[di];
            for (int z = 0; z < 256; ++z) {
                const double* e_z = model->embed(z);
                double dot = 0.0, norm2 = 0.0;
                for (int d = 0; d < ed; ++d) {
                    double diff = e_z[d] - e_cur[d];
                    dot += -g[d] * diff;
                    norm2 += diff * diff;
                }
                double align = dot / std::max(std::sqrt(norm2), tau);
                if (align > best_align) {
                    best_align = align;
                    best_z = z;
                }
            }
            if (best_z != delta[di])
                changes.push_back({di, std::uint8_t(best_z), best_align});
        }
        if (changes.empty()) break;
        std::stable_sort(changes.begin(), changes.end(),
                         [](const ByteChange& a, const ByteChange& b) {
                             return a.alignment > b.alignment;
                         });
        // budget-aware: take the best-aligned replacements that still fit
        std::uint64_t cost = quick_cost(plan, view, delta);
        std::vector<ByteChange> kept;
        for (const auto& c : changes) {
            std::int64_t dc = 0;
            if (!view.inserted[c.delta_index]) {
                bool was = delta[c.delta_index] != view.original[c.delta_index];
                bool now = c.new_byte != view.original[c.delta_index];
                dc = int(now) - int(was);
            }
            if (cost + dc > cfg.epsilon) continue;
            cost += dc;
            kept.push_back(c);
        }
        if (kept.empty()) break;

        // apply the whole step; on worsening, back off to the better-aligned half
        bool improved = false;
        std::size_t take = kept.size();
        while (take > 0) {
            Bytes trial = delta;
            for (std::size_t i = 0; i < take; ++i) trial[kept[i].delta_index] = kept[i].new_byte;
            std::uint64_t tc = quick_cost(plan, view, trial);
            if (tc > cfg.epsilon) {
                take /= 2;
                continue;
            }
            Bytes candidate = manip::apply(plan, trial);
            assert_candidate(orig, candidate, plan, trial, cfg, api_flag);
            double m = model->malice(candidate);
            ++result.queries_used;
            if (m < best) {
                best = m;
                delta = std::move(trial);
                current = candidate;
                result.best_bytes = std::move(candidate);
                result.best_score = best;
                result.payload_size = tc;
                improved = true;
                break;
            }
            take /= 2;
        }
        result.trace.push_back({iter, best, result.queries_used, result.payload_size});
        if (!improved) break;  // the same gradient would propose the same step
    }
    result.success = best < cfg.threshold;
    return result;
}

AttackResult single_gradient_step(const pe::PeFile& x,
                                  const std::vector<manip::Manipulation>& ms,
                                  detect::Detector& detector, const AttackConfig& cfg) {
    AttackConfig one = cfg;
    one.max_iterations = 1;
    return iterative_byte_gradient(x, ms, detector, one);
}

DonorPool harvest_donors(const std::vector<std::pair<std::string, Bytes>>& benign_files,
                         std::size_t max_sections, std::uint64_t seed) {
    if (benign_files.empty()) throw NoBenignFiles("no benign files to harvest from");
    DonorPool pool;
    for (const auto& [id, bytes] : benign_files) {
        pe::PeFile p = pe::parse(bytes);
        for (const auto& s : p.sections)
            if (!s.content.empty())
                pool.donors.push_back({id, s.entry.name_str(), s.content});
    }
    std::mt19937_64 rng(seed);
    std::shuffle(pool.donors.begin(), pool.donors.end(), rng);
    if (pool.donors.size() > max_sections) pool.donors.resize(max_sections);
    return pool;
}

Bytes gamma_payload(const DonorPool& donors, const std::vector<double>& genome,
                    std::uint64_t epsilon) {
    std::vector<double> s = genome;
    auto realized = [&](const std::vector<double>& g) {
        std::uint64_t total = 0;
        for (std::size_t i = 0; i < donors.donors.size(); ++i)
            total += std::uint64_t(std::llround(g[i] * double(donors.donors[i].content.size())));
        return total;
    };
    std::uint64_t total = realized(s);
    if (total > epsilon && total > 0) {
        double scale = double(epsilon) / double(total);
        for (auto& v : s) v *= scale;
        while (realized(s) > epsilon)  // rounding can leave a byte or two over
            for (auto& v : s) v *= 0.999;
    }
    Bytes payload;
    for (std::size_t i = 0; i < donors.donors.size(); ++i) {
        std::uint64_t n =
            std::uint64_t(std::llround(s[i] * double(donors.donors[i].content.size())));
        payload.insert(payload.end(), donors.donors[i].content.begin(),
                       donors.donors[i].content.begin() + n);
    }
    return payload;
}

AttackResult gamma_attack(const pe::PeFile& x, const DonorPool& donors,
                          detect::Detector& detector, const AttackConfig& cfg) {
    if (donors.donors.empty()) throw EmptyDonorPool("donor pool is empty");
    Bytes orig = pe::serialize(x);
    std::uint32_t fa = x.optional.file_alignment();
    std::size_t k = donors.donors.size();

    // structural overhead of the carrier manipulation with no payload
    auto carrier = [&](std::uint64_t content) {
        return std::vector<manip::Manipulation>{
            manip::Manipulation::shift(fa),
            manip::Manipulation::section_injection(".gma", align_up(content, fa))};
    };
    auto base_plan = make_plan(x, carrier(0));
    std::uint64_t overhead =
        base_plan.structural_insertions + base_plan.structural_substitutions;
    if (overhead > cfg.epsilon)
        throw BudgetZeroWithInsertions("budget below the carrier-section overhead");
    std::uint64_t payload_cap = (cfg.epsilon - overhead) / fa * fa;

    struct Eval {
        double malice;
        double fitness;
        std::uint64_t payload;
        Bytes bytes;
        std::vector<manip::Region> regions;
    };
    auto evaluate = [&](const std::vector<double>& genome) {
        Bytes payload = gamma_payload(donors, genome, payload_cap);
        auto plan = make_plan(x, carrier(payload.size()));
        // route payload bytes into the injected section, zero elsewhere
        const auto& sec = plan.transformed.sections.back().entry;
        std::uint64_t sec_lo = sec.pointer_to_raw_data;
        Bytes delta(plan.editable_length(), 0);
        std::size_t cursor = 0;
        for (const auto& r : plan.editable)
            for (std::uint64_t i = 0; i < r.length; ++i, ++cursor) {
                std::uint64_t off = r.offset + i;
                if (!plan.is_inserted(off))
                    delta[cursor] = orig[plan.to_original(off)];
                else if (off >= sec_lo && off < sec_lo + payload.size())
                    delta[cursor] = payload[off - sec_lo];
            }
        Bytes candidate = manip::apply(plan, delta);
        assert_candidate(orig, candidate, plan, delta, cfg, false);
        double m = detector.score(candidate).malice;
        return Eval{m, m + cfg.lambda * double(payload.size()),
                    std::uint64_t(payload.size()), std::move(candidate), plan.editable};
    };

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, cfg.mutation_sigma);

    std::vector<std::vector<double>> population(cfg.population, std::vector<double>(k, 0.0));
    for (int i = 1; i < cfg.population; ++i)
        for (auto& g : population[i]) g = uni(rng);

    AttackResult result;
    double best_fit = 1e300;
    int generation = 0;
    std::vector<Eval> evals(cfg.population);
    while (true) {
        if (result.queries_used + std::uint64_t(cfg.population) > std::uint64_t(cfg.max_queries))
            break;
        for (int i = 0; i < cfg.population; ++i) {
            evals[i] = evaluate(population[i]);
            ++result.queries_used;
            if (evals[i].fitness < best_fit) {
                best_fit = evals[i].fitness;
                result.best_score = evals[i].malice;
                result.best_bytes = evals[i].bytes;
                result.payload_size = evals[i].payload;
                result.edited_regions = evals[i].regions;
            }
        }
        ++generation;
        result.trace.push_back(
            {generation, result.best_score, result.queries_used, result.payload_size});
        if (result.best_score < cfg.threshold) break;

        // elitist selection, uniform crossover, Gaussian mutation
        std::vector<int> order(cfg.population);
        for (int i = 0; i < cfg.population; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return evals[a].fitness < evals[b].fitness; });
        std::vector<std::vector<double>> next;
        next.reserve(cfg.population);
        for (int i = 0; i < cfg.elitism; ++i) next.push_back(population[order[i]]);
        while (int(next.size()) < cfg.population) {
            const auto& pa = population[order[rng() % cfg.elitism]];
            const auto& pb = population[order[rng() % cfg.elitism]];
            std::vector<double> child = pa;
            if (uni(rng) < cfg.crossover_prob)
                for (std::size_t g = 0; g < k; ++g)
                    if (uni(rng) < 0.5) child[g] = pb[g];
            for (auto& g : child)
                if (uni(rng) < cfg.mutation_prob)
                    g = std::clamp(g + gauss(rng), 0.0, 1.0);
            next.push_back(std::move(child));
        }
        population = std::move(next);
    }
    result.iterations_used = generation;
    result.success = result.best_score < cfg.threshold;
    return result;
}

double LinearScorer::loss(const std::vector<double>& x) const {
    double v = b;
    for (std::size_t i = 0; i < x.size(); ++i) v += w[i] * x[i];
    return v;
}

std::vector<double> additive_sanity_attack(const std::vector<double>& x_vec,
                                           const LinearScorer& model, double epsilon) {
    std::vector<double> out = x_vec;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double step = model.w[i] > 0 ? epsilon : model.w[i] < 0 ? -epsilon : 0.0;
        out[i] = std::clamp(x_vec[i] + step, 0.0, 1.0);
    }
    // cross-check against independent per-coordinate interval optimization
    std::vector<double> brute = x_vec;
    for (std::size_t i = 0; i < brute.size(); ++i) {
        double lo = std::max(0.0, x_vec[i] - epsilon);
        double hi = std::min(1.0, x_vec[i] + epsilon);
        brute[i] = model.w[i] * lo >= model.w[i] * hi ? lo : hi;
    }
    if (std::abs(model.loss(out) - model.loss(brute)) > 1e-9)
        throw InvariantViolation("closed-form attack disagrees with coordinate search");
    return out;
}

std::vector<TransferRow> transfer_evaluate(const std::vector<Bytes>& originals,
                                           const std::vector<Bytes>& adversarials,
                                           const std::vector<detect::Detector*>& targets) {
    if (originals.size() != adversarials.size())
        throw InvariantViolation("originals and adversarials must be paired");
    std::vector<TransferRow> report;
    for (auto* t : targets) {
        TransferRow row;
        row.target = t->name();
        for (const auto& b : originals) row.detections_before += t->score(b).malicious;
        for (const auto& b : adversarials) row.detections_after += t->score(b).malicious;
        report.push_back(row);
    }
    return report;
}

}  // namespace pevade::attack
