#include "qbdc/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "qbdc/trainer.hpp"

namespace fs = std::filesystem;

namespace qbdc::harness {

std::string kind_name(Kind k) {
    switch (k) {
        case Kind::qbdc: return "qbdc";
        case Kind::random_selection: return "random";
        case Kind::qbdc_dropout_trained: return "qbdc_dropout_trained";
        case Kind::full_baseline: return "full_baseline";
        case Kind::adversarial_probe: return "adversarial_probe";
    }
    return "?";
}

namespace {

Kind parse_kind(const std::string& v) {
    if (v == "qbdc") return Kind::qbdc;
    if (v == "random") return Kind::random_selection;
    if (v == "qbdc_dropout_trained") return Kind::qbdc_dropout_trained;
    if (v == "full_baseline") return Kind::full_baseline;
    if (v == "adversarial_probe") return Kind::adversarial_probe;
    throw std::invalid_argument("config: unknown experiment kind '" + v + "'");
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

template <typename F>
auto parse_or_reject(const std::string& key, const std::string& value, F f) {
    try {
        std::size_t used = 0;
        auto v = f(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: cannot parse value '" + value + "' for key '" + key + "'");
    }
}

long parse_long(const std::string& key, const std::string& value) {
    return parse_or_reject(key, value, [](const std::string& v, std::size_t* used) { return std::stol(v, used); });
}

double parse_double(const std::string& key, const std::string& value) {
    return parse_or_reject(key, value, [](const std::string& v, std::size_t* used) { return std::stod(v, used); });
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("config: cannot parse value '" + value + "' for key '" + key + "'");
}

std::vector<std::string> split_csv(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "kind") cfg.kind = parse_kind(value);
    else if (key == "dataset") cfg.dataset = value;
    else if (key == "mnist_dir") cfg.mnist_dir = value;
    else if (key == "blob_classes") cfg.blob_classes = static_cast<int>(parse_long(key, value));
    else if (key == "blob_per_class") cfg.blob_per_class = static_cast<int>(parse_long(key, value));
    else if (key == "blob_dim") cfg.blob_dim = static_cast<int>(parse_long(key, value));
    else if (key == "blob_separation") cfg.blob_separation = parse_double(key, value);
    else if (key == "train_count") cfg.train_count = static_cast<int>(parse_long(key, value));
    else if (key == "val_count") cfg.val_count = static_cast<int>(parse_long(key, value));
    else if (key == "test_count") cfg.test_count = static_cast<int>(parse_long(key, value));
    else if (key == "split_seed") cfg.split_seed = static_cast<std::uint64_t>(parse_long(key, value));
    else if (key == "n") cfg.n = static_cast<int>(parse_long(key, value));
    else if (key == "p_d") cfg.p_d = parse_double(key, value);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_long(key, value));
    else if (key == "init_minibatches") cfg.init_minibatches = static_cast<int>(parse_long(key, value));
    else if (key == "K" || key == "k") cfg.k = static_cast<int>(parse_long(key, value));
    else if (key == "budget") cfg.budget = parse_double(key, value);
    else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "decay") cfg.decay = parse_double(key, value);
    else if (key == "epsilon") cfg.epsilon = parse_double(key, value);
    else if (key == "patience") cfg.patience = static_cast<int>(parse_long(key, value));
    else if (key == "max_epochs") cfg.max_epochs = static_cast<int>(parse_long(key, value));
    else if (key == "standard_dropout_rate") cfg.standard_dropout_rate = parse_double(key, value);
    else if (key == "warm_start") cfg.warm_start = parse_bool(key, value);
    else if (key == "hidden") {
        cfg.hidden.clear();
        for (const auto& item : split_csv(value)) cfg.hidden.push_back(static_cast<int>(parse_long(key, item)));
    } else if (key == "seeds") {
        cfg.seeds.clear();
        for (const auto& item : split_csv(value)) cfg.seeds.push_back(static_cast<std::uint64_t>(parse_long(key, item)));
    } else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "emit_train_log") cfg.emit_train_log = parse_bool(key, value);
    else if (key == "eps_grid") {
        cfg.eps_grid.clear();
        for (const auto& item : split_csv(value)) cfg.eps_grid.push_back(parse_double(key, item));
    } else if (key == "probe_count") cfg.probe_count = static_cast<int>(parse_long(key, value));
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

void validate(const ExperimentConfig& cfg) {
    auto reject = [](const std::string& key, const std::string& why) {
        throw std::invalid_argument("config: key '" + key + "' " + why);
    };
    if (cfg.dataset != "mnist" && cfg.dataset != "blobs") reject("dataset", "must be 'mnist' or 'blobs'");
    if (cfg.n < 1) reject("n", "must be >= 1");
    if (cfg.p_d < 0.0 || cfg.p_d >= 1.0) reject("p_d", "must be in [0,1)");
    if (cfg.batch_size < 1) reject("batch_size", "must be >= 1");
    if (cfg.init_minibatches < 1) reject("init_minibatches", "must be >= 1");
    if (cfg.k != 0 && cfg.k < cfg.batch_size) reject("K", "must be >= batch_size");
    if (cfg.budget <= 0.0 || cfg.budget > 1.0) reject("budget", "must be in (0,1]");
    if (cfg.lr <= 0.0) reject("lr", "must be positive");
    if (cfg.decay < 0.0 || cfg.decay >= 1.0) reject("decay", "must be in [0,1)");
    if (cfg.epsilon <= 0.0) reject("epsilon", "must be positive");
    if (cfg.patience < 0) reject("patience", "must be >= 0");
    if (cfg.max_epochs < 1) reject("max_epochs", "must be >= 1");
    if (cfg.standard_dropout_rate < 0.0 || cfg.standard_dropout_rate >= 1.0)
        reject("standard_dropout_rate", "must be in [0,1)");
    if (cfg.seeds.empty()) reject("seeds", "must not be empty");
    if (cfg.blob_classes < 2) reject("blob_classes", "must be >= 2");
    if (cfg.blob_per_class < 1 || cfg.blob_dim < 1) reject("blob_per_class", "and blob_dim must be >= 1");
    if (cfg.probe_count < 1) reject("probe_count", "must be >= 1");
    for (double e : cfg.eps_grid) {
        if (e < 0.0) reject("eps_grid", "entries must be >= 0");
    }
    for (int h : cfg.hidden) {
        if (h < 1) reject("hidden", "entries must be >= 1");
    }
    if (cfg.out_dir.empty()) reject("out_dir", "must not be empty");
}

}  // namespace

ExperimentConfig parse_config(const std::string& path,
                              const std::vector<std::pair<std::string, std::string>>& overrides) {
    ExperimentConfig cfg;
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f.is_open()) throw std::runtime_error("config: cannot open " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key=value");
            }
            apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    for (const auto& [key, value] : overrides) apply_key(cfg, key, value);
    if (const char* env = std::getenv("QBDC_OUT_DIR"); env && *env) cfg.out_dir = env;
    validate(cfg);
    return cfg;
}

std::vector<nn::LayerSpec> architecture_for(const data::Dataset& ds, const std::vector<int>& hidden) {
    const std::vector<int> shape = ds.sample_shape();
    const bool image_like = shape.size() == 2 && shape[0] >= 12 && shape[1] >= 12;
    std::vector<nn::LayerSpec> stack;
    if (image_like) {
        stack = {nn::LayerSpec::conv(20, 3, 3), nn::LayerSpec::relu(),  nn::LayerSpec::maxpool(2),
                 nn::LayerSpec::conv(40, 3, 3), nn::LayerSpec::relu(),  nn::LayerSpec::maxpool(2),
                 nn::LayerSpec::dense(100),     nn::LayerSpec::relu(),  nn::LayerSpec::dense(100),
                 nn::LayerSpec::relu(),         nn::LayerSpec::dense(ds.num_classes), nn::LayerSpec::softmax()};
    } else {
        for (int w : hidden) {
            stack.push_back(nn::LayerSpec::dense(w));
            stack.push_back(nn::LayerSpec::relu());
        }
        stack.push_back(nn::LayerSpec::dense(ds.num_classes));
        stack.push_back(nn::LayerSpec::softmax());
    }
    return stack;
}

DatasetSplits load_splits(const ExperimentConfig& cfg) {
    DatasetSplits out;
    if (cfg.dataset == "mnist") {
        const fs::path dir(cfg.mnist_dir);
        const std::string train_images = (dir / "train-images-idx3-ubyte").string();
        const std::string train_labels = (dir / "train-labels-idx1-ubyte").string();
        const std::string test_images = (dir / "t10k-images-idx3-ubyte").string();
        const std::string test_labels = (dir / "t10k-labels-idx1-ubyte").string();
        for (const auto& p : {train_images, train_labels, test_images, test_labels}) {
            if (!fs::exists(p)) throw std::runtime_error("dataset: missing MNIST file " + p);
        }
        const data::Dataset full = data::load_idx_dataset(train_images, train_labels);
        const int train_n = cfg.train_count > 0 ? cfg.train_count : 50000;
        const int val_n = cfg.val_count > 0 ? cfg.val_count : 10000;
        auto [pool, val] = data::split(full, {train_n, val_n, cfg.split_seed});
        out.pool = std::move(pool);
        out.validation = std::move(val);
        out.test = data::load_idx_dataset(test_images, test_labels);
    } else {
        const data::Dataset full =
            data::synthetic_blobs(cfg.blob_classes, cfg.blob_per_class, cfg.blob_dim, cfg.blob_separation,
                                  cfg.split_seed);
        const int total = full.count();
        const int train_n = cfg.train_count > 0 ? cfg.train_count : total * 4 / 7;
        const int val_n = cfg.val_count > 0 ? cfg.val_count : total / 7;
        const int test_n = cfg.test_count > 0 ? cfg.test_count : total - train_n - val_n;
        if (train_n + val_n + test_n > total) {
            throw std::invalid_argument("dataset: blob split exceeds generated samples");
        }
        auto [trainval, test] = data::split(full, {train_n + val_n, test_n, cfg.split_seed});
        auto [pool, val] = data::split(trainval, {train_n, val_n, cfg.split_seed + 1});
        out.pool = std::move(pool);
        out.validation = std::move(val);
        out.test = std::move(test);
    }
    return out;
}

active::ActiveConfig make_active_config(const ExperimentConfig& cfg, const DatasetSplits& splits,
                                        std::uint64_t seed) {
    active::ActiveConfig ac;
    ac.architecture = architecture_for(splits.pool, cfg.hidden);
    ac.committee_size = cfg.n;
    ac.dropout_prob = cfg.p_d;
    ac.candidate_pool = cfg.k > 0 ? cfg.k : 10 * cfg.batch_size;
    ac.batch_size = cfg.batch_size;
    ac.init_minibatches = cfg.init_minibatches;
    ac.label_budget = static_cast<long>(cfg.budget * splits.pool.count());
    ac.strategy = cfg.kind == Kind::random_selection ? active::Strategy::random_selection : active::Strategy::qbdc;
    ac.seed = seed;
    ac.warm_start = cfg.warm_start;
    ac.train.batch_size = cfg.batch_size;
    ac.train.max_epochs = cfg.max_epochs;
    ac.train.patience = cfg.patience;
    ac.train.standard_dropout_rate = cfg.kind == Kind::qbdc_dropout_trained ? cfg.standard_dropout_rate : 0.0;
    ac.learning_rate = cfg.lr;
    ac.decay = cfg.decay;
    ac.rms_epsilon = cfg.epsilon;
    return ac;
}

namespace {

std::string fmt(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

struct FullBaselineResult {
    nn::Network<float> net;
    active::RoundRecord record;
    std::vector<active::EpochLogRow> epoch_log;
};

FullBaselineResult run_full_baseline(const ExperimentConfig& cfg, const DatasetSplits& splits, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    FullBaselineResult out;
    out.net = nn::build_network<float>(splits.pool.sample_shape(), architecture_for(splits.pool, cfg.hidden), rng());
    auto rms = train::RmsPropState<float>::init(out.net, static_cast<float>(cfg.lr), static_cast<float>(cfg.decay),
                                                static_cast<float>(cfg.epsilon));
    train::TrainOptions opts;
    opts.batch_size = cfg.batch_size;
    opts.max_epochs = cfg.max_epochs;
    opts.patience = cfg.patience;
    const data::Subset all = data::Subset::all_of(splits.pool);
    const data::Subset val = data::Subset::all_of(splits.validation);
    const train::TrainResult r = train::train_until_early_stop(out.net, all, val, opts, rms, rng);
    for (const auto& row : r.log) out.epoch_log.push_back({0, row});
    out.record.round = 0;
    out.record.labeled_count = splits.pool.count();
    out.record.val_error = train::evaluate(out.net, val);
    out.record.test_error = train::evaluate(out.net, data::Subset::all_of(splits.test));
    return out;
}

class OutputSet {
  public:
    explicit OutputSet(const fs::path& dir) : dir_(dir) {}

    std::ofstream& open(const std::string& name) {
        const fs::path tmp = dir_ / (name + ".tmp");
        auto [it, fresh] = streams_.try_emplace(name);
        if (fresh) {
            it->second.open(tmp, std::ios::binary | std::ios::trunc);
            if (!it->second.is_open()) throw std::runtime_error("output: cannot write " + tmp.string());
        }
        return it->second;
    }

    // Renames every .tmp into place; called only after all writes succeeded.
    void commit() {
        for (auto& [name, stream] : streams_) {
            stream.flush();
            if (!stream) throw std::runtime_error("output: write failed for " + name);
            stream.close();
            fs::rename(dir_ / (name + ".tmp"), dir_ / name);
        }
        streams_.clear();
    }

    void discard() {
        for (auto& [name, stream] : streams_) {
            stream.close();
            std::error_code ec;
            fs::remove(dir_ / (name + ".tmp"), ec);
        }
        streams_.clear();
    }

  private:
    fs::path dir_;
    std::map<std::string, std::ofstream> streams_;
};

}  // namespace

std::vector<CurveRow> read_curves(const std::string& path) {
    std::ifstream f(path);
    if (!f.is_open()) throw std::runtime_error("curves: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || trim(line) != "seed,round,labeled_count,val_error,test_error") {
        throw std::runtime_error("curves: bad header in " + path);
    }
    std::vector<CurveRow> rows;
    while (std::getline(f, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const auto fields = split_csv(line);
        if (fields.size() != 5) throw std::runtime_error("curves: bad row in " + path);
        CurveRow r;
        r.seed = static_cast<std::uint64_t>(std::stoull(fields[0]));
        r.round = std::stoi(fields[1]);
        r.labeled_count = std::stol(fields[2]);
        r.val_error = std::stod(fields[3]);
        r.test_error = std::stod(fields[4]);
        rows.push_back(r);
    }
    return rows;
}

std::string SummaryTable::to_text() const {
    std::string out = "METHOD MEAN_ERROR_PCT MIN_ERROR_PCT\n";
    for (const auto& r : rows) {
        out += r.method + " " + fmt(r.mean_error, 2) + " " + fmt(r.min_error, 2) + "\n";
    }
    return out;
}

namespace {

SummaryRow summarize(const std::string& method, const std::vector<double>& final_errors) {
    SummaryRow row;
    row.method = method;
    double sum = 0.0, mn = final_errors.front();
    for (double e : final_errors) {
        sum += e;
        mn = std::min(mn, e);
    }
    row.mean_error = 100.0 * sum / static_cast<double>(final_errors.size());
    row.min_error = 100.0 * mn;
    return row;
}

void write_curve_rows(std::ofstream& out, std::uint64_t seed, const std::vector<active::RoundRecord>& rounds) {
    for (const auto& r : rounds) {
        out << seed << "," << r.round << "," << r.labeled_count << "," << fmt(r.val_error, 6) << ","
            << fmt(r.test_error, 6) << "\n";
    }
}

void write_epoch_rows(std::ofstream& out, std::uint64_t seed, const std::vector<active::EpochLogRow>& log) {
    for (const auto& e : log) {
        out << seed << "," << e.round << "," << e.row.epoch << "," << fmt(e.row.train_loss, 6) << ","
            << fmt(e.row.val_error, 6) << "\n";
    }
}

}  // namespace

void run_suite(const ExperimentConfig& cfg) {
    const DatasetSplits splits = load_splits(cfg);
    fs::create_directories(cfg.out_dir);
    OutputSet outputs{fs::path(cfg.out_dir)};

    try {
        std::ofstream& curves = outputs.open("curves.csv");
        curves << "seed,round,labeled_count,val_error,test_error\n";
        std::ofstream* train_log = nullptr;
        if (cfg.emit_train_log) {
            train_log = &outputs.open("train_log.csv");
            *train_log << "seed,round,epoch,train_loss,val_error\n";
        }

        std::map<std::string, std::vector<double>> finals;  // method -> per-seed final test error

        if (cfg.kind == Kind::adversarial_probe) {
            std::ofstream& advcsv = outputs.open("adversarial.csv");
            advcsv << "seed,epsilon,probed,flipped,rate,model_tag\n";
            const int probe_n = std::min(cfg.probe_count, splits.test.count());
            std::vector<int> probe_rows(static_cast<std::size_t>(probe_n));
            std::iota(probe_rows.begin(), probe_rows.end(), 0);
            const data::Subset probe = data::Subset::of(splits.test, probe_rows);
            const adv::FgsmParams params{};

            for (std::uint64_t seed : cfg.seeds) {
                const FullBaselineResult full = run_full_baseline(cfg, splits, seed);
                const active::RunResult qr = active::run_experiment(make_active_config(cfg, splits, seed),
                                                                    splits.pool, splits.validation, splits.test);
                write_curve_rows(curves, seed, qr.rounds);
                if (train_log) write_epoch_rows(*train_log, seed, qr.epoch_log);
                finals["qbdc"].push_back(qr.rounds.back().test_error);
                finals["full_baseline"].push_back(full.record.test_error);

                for (const auto& [tag, net] : {std::pair<const char*, const nn::Network<float>*>{"full", &full.net},
                                               {"qbdc", &qr.net}}) {
                    const adv::AdversarialReport report = adv::count_adversarials(*net, probe, cfg.eps_grid, params);
                    for (const auto& row : report.rows) {
                        advcsv << seed << "," << fmt(row.epsilon, 4) << "," << row.probed << "," << row.flipped << ","
                               << fmt(row.flip_rate, 6) << "," << tag << "\n";
                    }
                }
            }
        } else if (cfg.kind == Kind::full_baseline) {
            for (std::uint64_t seed : cfg.seeds) {
                const FullBaselineResult full = run_full_baseline(cfg, splits, seed);
                write_curve_rows(curves, seed, {full.record});
                if (train_log) write_epoch_rows(*train_log, seed, full.epoch_log);
                finals[kind_name(cfg.kind)].push_back(full.record.test_error);
            }
        } else {
            for (std::uint64_t seed : cfg.seeds) {
                const active::RunResult r = active::run_experiment(make_active_config(cfg, splits, seed),
                                                                   splits.pool, splits.validation, splits.test);
                write_curve_rows(curves, seed, r.rounds);
                if (train_log) write_epoch_rows(*train_log, seed, r.epoch_log);
                finals[kind_name(cfg.kind)].push_back(r.rounds.back().test_error);
            }
        }

        SummaryTable table;
        for (const auto& [method, errors] : finals) table.rows.push_back(summarize(method, errors));
        outputs.open("summary.txt") << table.to_text();

        outputs.commit();
    } catch (...) {
        outputs.discard();
        throw;
    }

    // Declared outputs must exist and parse; reruns overwrite in place.
    const auto curve_rows = read_curves((fs::path(cfg.out_dir) / "curves.csv").string());
    if (curve_rows.empty()) throw std::runtime_error("output: curves.csv is empty");
    if (!fs::exists(fs::path(cfg.out_dir) / "summary.txt")) throw std::runtime_error("output: summary.txt missing");
}

SummaryTable compare_methods(const std::string& curves_a, const std::string& curves_b,
                             const std::string& label_a, const std::string& label_b) {
    auto finals_of = [](const std::string& path) {
        std::map<std::uint64_t, CurveRow> finals;
        for (const auto& row : read_curves(path)) {
            auto [it, fresh] = finals.try_emplace(row.seed, row);
            if (!fresh && row.round > it->second.round) it->second = row;
        }
        if (finals.empty()) throw std::runtime_error("compare: no rows in " + path);
        return finals;
    };
    const auto fa = finals_of(curves_a);
    const auto fb = finals_of(curves_b);

    std::set<std::uint64_t> seeds_a, seeds_b;
    for (const auto& [s, _] : fa) seeds_a.insert(s);
    for (const auto& [s, _] : fb) seeds_b.insert(s);
    if (seeds_a != seeds_b) throw std::invalid_argument("compare: seed sets differ between curve files");
    for (const auto& [s, row] : fa) {
        if (row.labeled_count != fb.at(s).labeled_count) {
            throw std::invalid_argument("compare: final label budgets differ at seed " + std::to_string(s));
        }
    }

    std::vector<double> ea, eb;
    for (const auto& [s, row] : fa) ea.push_back(row.test_error);
    for (const auto& [s, row] : fb) eb.push_back(row.test_error);

    SummaryTable table;
    table.rows.push_back(summarize(label_a, ea));
    table.rows.push_back(summarize(label_b, eb));
    return table;
}

}  // namespace qbdc::harness
