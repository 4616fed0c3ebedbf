#include "pevade/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "pevade/external.hpp"
#include "pevade/oracle.hpp"
#include "pevade/pe.hpp"

namespace fs = std::filesystem;

namespace pevade::campaign {

// ---------------------------------------------------------------- config ----

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "corpus.dir",
        "train.model", "train.epochs", "train.learning_rate", "train.batch_size",
        "train.n_trees", "train.depth", "train.colsample", "train.seed",
        "detector.type", "detector.model", "detector.command", "detector.url",
        "detector.timeout_ms",
        "attack.optimizer", "attack.manipulations", "attack.epsilon",
        "attack.max_iterations", "attack.max_queries", "attack.population",
        "attack.elitism", "attack.crossover_prob", "attack.mutation_prob",
        "attack.mutation_sigma", "attack.lambda", "attack.threshold", "attack.seed",
        "attack.samples", "attack.max_donors",
        "output.dir",
        "transfer.type", "transfer.model", "transfer.command", "transfer.url",
        "transfer.timeout_ms",
    };
    return keys;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::from_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (!known_keys().count(key))
            throw ConfigError("unknown config key '" + key + "'");
        cfg.values[key] = value;
    }
    return cfg;
}

Config Config::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return from_string(buf.str());
}

std::string Config::get(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t pos = 0;
        std::int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not an integer: " + it->second);
    }
}

double Config::get_real(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not a number: " + it->second);
    }
}

// ------------------------------------------------------------------- io ----

Bytes read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const Bytes& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(content.data()), std::streamsize(content.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------- corpus ----

namespace {

std::array<std::uint8_t, 64> make_marker(std::uint8_t a, std::uint8_t b) {
    std::array<std::uint8_t, 64> m{};
    for (int i = 0; i < 64; ++i) m[i] = i % 2 ? a : b;
    return m;
}

}  // namespace

const std::array<std::uint8_t, 64> kMaliciousMarker = make_marker(0xD7, 0xE9);
const std::array<std::uint8_t, 64> kBenignMarker = make_marker(0x29, 0x5C);

namespace {

Bytes synth_sample(std::mt19937_64& rng, bool malicious, bool dual_marker) {
    pe::SynthSpec spec;
    spec.n_sections = 1 + int(rng() % 3);
    spec.overlay_len = std::uint32_t(rng() % 1024);
    spec.content_seed = rng();
    spec.pe32_plus = rng() % 4 == 0;
    Bytes b = pe::synthesize_minimal(spec);
    pe::PeFile p = pe::parse(b);
    Bytes& c = p.sections[0].content;
    if (malicious) {
        std::copy(kMaliciousMarker.begin(), kMaliciousMarker.end(), c.begin());
    } else if (dual_marker) {
        // benign file that also carries the malicious marker: forces models to
        // weight the benign marker as overriding evidence
        std::copy(kMaliciousMarker.begin(), kMaliciousMarker.end(), c.begin());
        std::copy(kBenignMarker.begin(), kBenignMarker.end(), c.begin() + 64);
    } else {
        std::copy(kBenignMarker.begin(), kBenignMarker.end(), c.begin());
    }
    return pe::serialize(p);
}

}  // namespace

SynthSummary cmd_synth(int n_benign, int n_malicious, const fs::path& out_dir,
                       std::uint64_t seed) {
    if (n_benign < 1 || n_malicious < 1)
        throw ConfigError("need at least one file per class");
    std::error_code ec;
    fs::create_directories(out_dir / "benign", ec);
    fs::create_directories(out_dir / "malicious", ec);
    std::mt19937_64 rng(seed);
    std::ostringstream manifest;
    SynthSummary summary;
    char name[64];
    for (int i = 0; i < n_benign; ++i) {
        Bytes b = synth_sample(rng, false, i % 4 == 3);
        std::snprintf(name, sizeof name, "benign/b_%04d.bin", i);
        write_file(out_dir / name, b);
        manifest << name << "\t0\n";
        ++summary.benign_written;
    }
    for (int i = 0; i < n_malicious; ++i) {
        Bytes b = synth_sample(rng, true, false);
        std::snprintf(name, sizeof name, "malicious/m_%04d.bin", i);
        write_file(out_dir / name, b);
        manifest << name << "\t1\n";
        ++summary.malicious_written;
    }
    summary.manifest = out_dir / "manifest.tsv";
    std::string m = manifest.str();
    write_file(summary.manifest, Bytes(m.begin(), m.end()));
    return summary;
}

std::vector<detect::LabeledSample> load_corpus(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("missing manifest " + manifest.string());
    fs::path base = manifest.parent_path();
    std::vector<detect::LabeledSample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw IoError("malformed manifest line: " + line);
        std::string rel = line.substr(0, tab);
        int label = std::stoi(line.substr(tab + 1));
        out.push_back({read_file(base / rel), label});
    }
    return out;
}

// ---------------------------------------------------------- model format ----

namespace {

constexpr char kMagic[4] = {'P', 'E', 'V', 'D'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
    Bytes buf;
    void u8(std::uint8_t v) { buf.push_back(v); }
    void u32(std::uint32_t v) {
        std::size_t n = buf.size();
        buf.resize(n + 4);
        write_u32(buf, n, v);
    }
    void i32(std::int32_t v) { u32(std::uint32_t(v)); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        std::size_t n = buf.size();
        buf.resize(n + 8);
        write_u64(buf, n, bits);
    }
};

struct Reader {
    const Bytes& buf;
    std::size_t pos = 0;
    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("truncated model file");
    }
    std::uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    std::uint32_t u32() {
        need(4);
        auto v = read_u32(buf, pos);
        pos += 4;
        return v;
    }
    std::int32_t i32() { return std::int32_t(u32()); }
    double f64() {
        need(8);
        std::uint64_t bits = read_u64(buf, pos);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

void write_header(Writer& w, std::uint8_t type) {
    for (char c : kMagic) w.u8(std::uint8_t(c));
    w.u32(kVersion);
    w.u8(type);
}

}  // namespace

void save_model(const detect::EndToEndModel& m, const fs::path& path) {
    Writer w;
    write_header(w, 1);
    w.u32(std::uint32_t(m.input_length));
    w.u32(std::uint32_t(m.embed_dim));
    w.u32(std::uint32_t(m.n_filters));
    w.u32(std::uint32_t(m.width));
    for (double v : m.embedding) w.f64(v);
    for (double v : m.filters) w.f64(v);
    for (double v : m.filter_bias) w.f64(v);
    for (double v : m.head_w) w.f64(v);
    w.f64(m.head_b);
    write_file(path, w.buf);
}

void save_model(const detect::FeatureModel& m, const fs::path& path) {
    Writer w;
    write_header(w, 2);
    w.f64(m.base_score);
    w.f64(m.learning_rate);
    w.u32(std::uint32_t(m.trees.size()));
    for (const auto& t : m.trees) {
        w.u32(std::uint32_t(t.nodes.size()));
        for (const auto& n : t.nodes) {
            w.i32(n.feature);
            w.f64(n.threshold);
            w.f64(n.value);
            w.i32(n.left);
            w.i32(n.right);
        }
    }
    write_file(path, w.buf);
}

std::unique_ptr<detect::Detector> load_model(const fs::path& path) {
    Bytes buf = read_file(path);
    Reader r{buf};
    for (char c : kMagic)
        if (r.u8() != std::uint8_t(c)) throw IoError("not a model file: " + path.string());
    if (r.u32() != kVersion) throw IoError("unsupported model version in " + path.string());
    std::uint8_t type = r.u8();
    if (type == 1) {
        auto m = std::make_unique<detect::EndToEndModel>();
        m->input_length = int(r.u32());
        m->embed_dim = int(r.u32());
        m->n_filters = int(r.u32());
        m->width = int(r.u32());
        m->allocate();
        for (auto& v : m->embedding) v = r.f64();
        for (auto& v : m->filters) v = r.f64();
        for (auto& v : m->filter_bias) v = r.f64();
        for (auto& v : m->head_w) v = r.f64();
        m->head_b = r.f64();
        return m;
    }
    if (type == 2) {
        auto m = std::make_unique<detect::FeatureModel>();
        m->base_score = r.f64();
        m->learning_rate = r.f64();
        std::uint32_t n_trees = r.u32();
        for (std::uint32_t t = 0; t < n_trees; ++t) {
            detect::RegressionTree tree;
            std::uint32_t n_nodes = r.u32();
            for (std::uint32_t n = 0; n < n_nodes; ++n) {
                detect::TreeNode node;
                node.feature = r.i32();
                node.threshold = r.f64();
                node.value = r.f64();
                node.left = r.i32();
                node.right = r.i32();
                tree.nodes.push_back(node);
            }
            m->trees.push_back(std::move(tree));
        }
        return m;
    }
    throw IoError("unknown model type tag in " + path.string());
}

// ------------------------------------------------------------- detectors ----

std::unique_ptr<detect::Detector> make_detector(const Config& cfg, const std::string& prefix) {
    std::string type = cfg.get(prefix + ".type");
    if (type == "end_to_end" || type == "feature") {
        auto d = load_model(cfg.get(prefix + ".model"));
        if (d->name() != (type == "feature" ? "feature_model" : "end_to_end"))
            throw ConfigError("model file type does not match " + prefix + ".type");
        return d;
    }
    int timeout = int(cfg.get_int(prefix + ".timeout_ms", 10000));
    if (type == "subprocess") {
        std::istringstream in(cfg.get(prefix + ".command"));
        std::vector<std::string> argv;
        std::string word;
        while (in >> word) argv.push_back(word);
        if (argv.empty()) throw ConfigError(prefix + ".command is empty");
        return std::make_unique<detect::ExternalDetector>(
            detect::ExternalDetector::subprocess(argv, timeout));
    }
    if (type == "http")
        return std::make_unique<detect::ExternalDetector>(
            detect::ExternalDetector::http(cfg.get(prefix + ".url"), timeout));
    throw ConfigError("unknown detector type '" + type + "'");
}

// ----------------------------------------------------------------- train ----

TrainSummary cmd_train(const Config& cfg, const fs::path& out_dir,
                       std::optional<std::uint64_t> seed_override) {
    auto dataset = load_corpus(fs::path(cfg.get("corpus.dir")) / "manifest.tsv");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::uint64_t seed = seed_override ? *seed_override
                                       : std::uint64_t(cfg.get_int("train.seed", 0));
    std::string kind = cfg.get("train.model", "end_to_end");
    TrainSummary summary;
    if (kind == "end_to_end") {
        detect::EndToEndModel model;
        detect::TrainHyper hyper;
        hyper.epochs = int(cfg.get_int("train.epochs", 20));
        hyper.learning_rate = cfg.get_real("train.learning_rate", 0.01);
        hyper.batch_size = int(cfg.get_int("train.batch_size", 16));
        hyper.seed = seed;
        summary.accuracy = detect::train_end_to_end(model, dataset, hyper).train_accuracy;
        summary.model_path = out_dir / "end_to_end.pevd";
        save_model(model, summary.model_path);
    } else if (kind == "feature") {
        detect::FeatureModel model;
        detect::FeatureTrainHyper hyper;
        hyper.n_trees = int(cfg.get_int("train.n_trees", 50));
        hyper.depth = int(cfg.get_int("train.depth", 3));
        hyper.learning_rate = cfg.get_real("train.learning_rate", 0.3);
        hyper.colsample = cfg.get_real("train.colsample", 1.0);
        hyper.seed = seed;
        summary.accuracy = detect::train_feature_model(model, dataset, hyper).train_accuracy;
        summary.model_path = out_dir / "feature.pevd";
        save_model(model, summary.model_path);
    } else {
        throw ConfigError("unknown train.model '" + kind + "'");
    }
    return summary;
}

// --------------------------------------------------------- manipulations ----

std::vector<manip::Manipulation> parse_manipulations(const std::string& text) {
    std::vector<manip::Manipulation> out;
    std::istringstream in(text);
    std::string token;
    while (std::getline(in, token, ',')) {
        token = trim(token);
        if (token.empty()) continue;
        std::vector<std::string> parts;
        std::istringstream tin(token);
        std::string part;
        while (std::getline(tin, part, ':')) parts.push_back(trim(part));
        const std::string& k = parts[0];
        auto amount = [&](std::size_t i) -> std::uint64_t {
            if (parts.size() <= i) throw ConfigError("manipulation '" + k + "' needs a size");
            return std::stoull(parts[i]);
        };
        if (k == "partial_dos") out.push_back(manip::Manipulation::partial_dos());
        else if (k == "full_dos") out.push_back(manip::Manipulation::full_dos());
        else if (k == "header_fields") out.push_back(manip::Manipulation::header_fields());
        else if (k == "slack_space") out.push_back(manip::Manipulation::slack_space());
        else if (k == "extend") out.push_back(manip::Manipulation::extend(amount(1)));
        else if (k == "shift") out.push_back(manip::Manipulation::shift(amount(1)));
        else if (k == "padding") out.push_back(manip::Manipulation::padding(amount(1)));
        else if (k == "section_injection") {
            if (parts.size() != 3) throw ConfigError("section_injection:NAME:SIZE expected");
            out.push_back(manip::Manipulation::section_injection(parts[1], std::stoull(parts[2])));
        } else if (k == "api_injection") {
            if (parts.size() != 2) throw ConfigError("api_injection:DLL!FUNC;... expected");
            std::vector<manip::ApiEntry> entries;
            std::istringstream ein(parts[1]);
            std::string entry;
            while (std::getline(ein, entry, ';')) {
                auto bang = entry.find('!');
                if (bang == std::string::npos)
                    throw ConfigError("api entry '" + entry + "' must be DLL!FUNC");
                entries.push_back({trim(entry.substr(0, bang)), trim(entry.substr(bang + 1))});
            }
            out.push_back(manip::Manipulation::api_injection(std::move(entries)));
        } else {
            throw ConfigError("unknown manipulation '" + k + "'");
        }
    }
    return out;
}

// ---------------------------------------------------------------- attack ----

namespace {

attack::AttackConfig attack_config(const Config& cfg) {
    attack::AttackConfig a;
    a.epsilon = std::uint64_t(cfg.get_int("attack.epsilon", 4096));
    a.max_iterations = int(cfg.get_int("attack.max_iterations", 50));
    a.max_queries = int(cfg.get_int("attack.max_queries", 500));
    a.population = int(cfg.get_int("attack.population", 20));
    a.elitism = int(cfg.get_int("attack.elitism", 5));
    a.crossover_prob = cfg.get_real("attack.crossover_prob", 0.5);
    a.mutation_prob = cfg.get_real("attack.mutation_prob", 0.1);
    a.mutation_sigma = cfg.get_real("attack.mutation_sigma", 0.2);
    a.lambda = cfg.get_real("attack.lambda", 1e-6);
    a.threshold = cfg.get_real("attack.threshold", 0.5);
    a.seed = std::uint64_t(cfg.get_int("attack.seed", 0));
    if (a.population < 2 || a.elitism < 1 || a.elitism >= a.population)
        throw ConfigError("attack population/elitism out of range");
    return a;
}

std::string csv_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

AttackSummary cmd_attack(const Config& cfg, const fs::path& out_dir, int jobs,
                         std::optional<std::uint64_t> seed_override) {
    fs::path corpus_dir = cfg.get("corpus.dir");
    auto manifest_path = corpus_dir / "manifest.tsv";
    std::ifstream check(manifest_path);
    if (!check) throw IoError("missing manifest " + manifest_path.string());

    // collect paths by label; samples stay on disk until needed
    std::vector<fs::path> malicious, benign;
    {
        std::string line;
        while (std::getline(check, line)) {
            if (trim(line).empty()) continue;
            auto tab = line.find('\t');
            fs::path rel = line.substr(0, tab);
            (line.substr(tab + 1) == "1" ? malicious : benign).push_back(corpus_dir / rel);
        }
    }
    if (malicious.empty()) throw IoError("no malicious samples under " + corpus_dir.string());
    std::size_t cap = std::size_t(cfg.get_int("attack.samples", std::int64_t(malicious.size())));
    if (malicious.size() > cap) malicious.resize(cap);

    auto detector = make_detector(cfg, "detector");
    attack::AttackConfig acfg = attack_config(cfg);
    if (seed_override) acfg.seed = *seed_override;
    std::string optimizer = cfg.get("attack.optimizer", "iterative_gradient");

    attack::DonorPool donors;
    if (optimizer == "gamma") {
        std::vector<std::pair<std::string, Bytes>> benign_bytes;
        for (const auto& p : benign) benign_bytes.push_back({p.filename().string(), read_file(p)});
        donors = attack::harvest_donors(benign_bytes,
                                        std::size_t(cfg.get_int("attack.max_donors", 32)),
                                        acfg.seed);
    }
    auto manips = parse_manipulations(cfg.get("attack.manipulations", "extend:4096"));

    struct SampleOutcome {
        std::string id;
        bool detected_before = false;
        attack::AttackResult result;
    };
    std::vector<SampleOutcome> outcomes(malicious.size());

    auto run_one = [&](std::size_t i) {
        Bytes original = read_file(malicious[i]);
        pe::PeFile parsed = pe::parse(original);
        attack::AttackConfig local = acfg;
        local.seed = acfg.seed * 0x9E3779B97F4A7C15ull + i + 1;
        SampleOutcome& o = outcomes[i];
        o.id = malicious[i].stem().string();
        o.detected_before = detector->score(original).malicious;
        if (optimizer == "gamma")
            o.result = attack::gamma_attack(parsed, donors, *detector, local);
        else if (optimizer == "iterative_gradient")
            o.result = attack::iterative_byte_gradient(parsed, manips, *detector, local);
        else if (optimizer == "single_step")
            o.result = attack::single_gradient_step(parsed, manips, *detector, local);
        else if (optimizer == "hill_climb")
            o.result = attack::attack_loop(parsed, manips, *detector,
                                           [](double m) { return m; }, local);
        else
            throw ConfigError("unknown attack.optimizer '" + optimizer + "'");
    };

    jobs = std::max(1, jobs);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= malicious.size()) return;
            try {
                run_one(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    // aggregate deterministically in sample order
    std::error_code ec;
    fs::create_directories(out_dir / "adv", ec);
    fs::create_directories(out_dir / "orig", ec);
    std::ostringstream csv;
    csv << "sample_id,step_index,queries_cum,best_score,detected,payload_bytes\n";
    AttackSummary summary;
    summary.samples = int(malicious.size());
    for (std::size_t i = 0; i < malicious.size(); ++i) {
        const SampleOutcome& o = outcomes[i];
        summary.detected_before += o.detected_before;
        summary.detected_after += o.result.best_score >= acfg.threshold;
        for (const auto& step : o.result.trace)
            csv << o.id << ',' << step.step_index << ',' << step.queries_cum << ','
                << csv_double(step.score) << ',' << (step.score >= acfg.threshold ? 1 : 0)
                << ',' << step.payload_bytes << '\n';
        write_file(out_dir / "adv" / (o.id + ".bin"), o.result.best_bytes);
        write_file(out_dir / "orig" / (o.id + ".bin"), read_file(malicious[i]));
        std::ostringstream prov;
        for (const auto& r : o.result.edited_regions)
            prov << r.offset << ' ' << r.length << " adv-payload\n";
        std::string ps = prov.str();
        write_file(out_dir / "adv" / (o.id + ".prov"), Bytes(ps.begin(), ps.end()));
    }
    summary.csv = out_dir / "campaign.csv";
    std::string body = csv.str();
    write_file(summary.csv, Bytes(body.begin(), body.end()));
    return summary;
}

// -------------------------------------------------------------- transfer ----

TransferSummary cmd_transfer(const Config& cfg, const fs::path& adversarial_dir,
                             const fs::path& out_dir) {
    std::vector<fs::path> adv_files;
    for (const auto& entry : fs::directory_iterator(adversarial_dir / "adv"))
        if (entry.path().extension() == ".bin") adv_files.push_back(entry.path());
    std::sort(adv_files.begin(), adv_files.end());
    if (adv_files.empty())
        throw IoError("no adversarial files under " + adversarial_dir.string());

    std::vector<Bytes> originals, adversarials;
    for (const auto& p : adv_files) {
        fs::path orig = adversarial_dir / "orig" / p.filename();
        originals.push_back(read_file(orig));
        adversarials.push_back(read_file(p));
    }

    auto target = make_detector(cfg, "transfer");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    TransferSummary summary;
    summary.csv = out_dir / "transfer.csv";
    std::ostringstream csv;
    csv << "target_id,detections_before,detections_after\n";
    try {
        summary.rows = attack::transfer_evaluate(originals, adversarials, {target.get()});
        for (const auto& row : summary.rows)
            csv << row.target << ',' << row.detections_before << ',' << row.detections_after
                << '\n';
    } catch (const std::exception& e) {
        csv << target->name() << ",error,error\n";
        std::string body = csv.str();
        write_file(summary.csv, Bytes(body.begin(), body.end()));
        throw;
    }
    std::string body = csv.str();
    write_file(summary.csv, Bytes(body.begin(), body.end()));
    return summary;
}

// --------------------------------------------------------------- inspect ----

std::string inspect_dump(const fs::path& file) {
    Bytes b = read_file(file);
    pe::PeFile p = pe::parse(b);
    std::ostringstream out;
    out << "file: " << file.filename().string() << " (" << b.size() << " bytes)\n";
    out << "format: " << (p.optional.is_pe32_plus() ? "PE32+" : "PE32") << "\n";
    out << "machine: 0x" << std::hex << p.coff.machine << std::dec
        << "  subsystem: " << p.optional.subsystem() << "\n";
    out << "e_lfanew: 0x" << std::hex << p.dos.e_lfanew << std::dec
        << "  size_of_headers: " << p.optional.size_of_headers()
        << "  entry_rva: 0x" << std::hex << p.optional.address_of_entry_point() << std::dec
        << "\n";
    out << "sections (" << p.sections.size() << "):\n";
    for (const auto& s : p.sections)
        out << "  " << s.entry.name_str() << "  va=0x" << std::hex << s.entry.virtual_address
            << std::dec << " vsize=" << s.entry.virtual_size
            << " raw=[" << s.entry.pointer_to_raw_data << ", "
            << s.entry.pointer_to_raw_data + s.entry.size_of_raw_data << ")\n";
    auto slack = pe::compute_slack_regions(p);
    out << "slack regions (" << slack.size() << "):\n";
    for (const auto& r : slack)
        out << "  [" << r.offset << ", " << r.offset + r.length << ")\n";
    if (!p.gaps.empty()) {
        out << "gaps (" << p.gaps.size() << "):\n";
        for (const auto& [off, content] : p.gaps)
            out << "  [" << off << ", " << off + content.size() << ")\n";
    }
    out << "overlay: " << p.overlay.size() << " bytes at " << p.overlay_offset() << "\n";
    if (p.imports.present()) {
        out << "imports:\n";
        for (const auto& d : p.imports.descriptors) {
            out << "  " << d.dll << ":";
            for (const auto& f : d.functions) out << ' ' << f;
            out << "\n";
        }
    }
    fs::path prov = file;
    prov.replace_extension(".prov");
    if (fs::exists(prov)) {
        out << "edited ranges:\n";
        std::ifstream in(prov);
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            std::istringstream lin(line);
            std::uint64_t off, len;
            std::string tag;
            lin >> off >> len >> tag;
            out << "  [" << off << ", " << off + len << ") " << tag << "\n";
        }
    }
    return out.str();
}

}  // namespace pevade::campaign
