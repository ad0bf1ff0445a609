#include "topoattn/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

namespace topoattn {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
    throw Error(ErrorKind::InvalidParameter, "config key '" + key + "' = '" + value + "': " + why);
}

long long to_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &pos);
    } catch (const std::exception&) {
        bad(key, v, "expected an integer");
    }
    if (pos != v.size()) bad(key, v, "expected an integer");
    return out;
}

double to_real(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        bad(key, v, "expected a number");
    }
    if (pos != v.size()) bad(key, v, "expected a number");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad(key, v, "expected true or false");
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
    return out;
}

template <class T>
std::string join_num(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
    return os.str();
}

std::string real(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

struct Key {
    std::string name;
    std::string help;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Key>& keys() {
    static const std::vector<Key> k = {
        {"datasets", "dataset names (stress, cyclic, shell, co2, volatility, ims1, ims2)",
         [](ExperimentConfig& c, const std::string& v) {
             auto names = split_list(v);
             for (const auto& n : names) {
                 if (!find_dataset(n)) bad("datasets", n, "unknown dataset");
             }
             c.datasets = std::move(names);
         },
         [](const ExperimentConfig& c) { return join(c.datasets); }},
        {"modes", "mode ids; empty = full registry",
         [](ExperimentConfig& c, const std::string& v) {
             auto ids = split_list(v);
             for (const auto& id : ids) {
                 if (!find_mode(id)) bad("modes", id, "unknown mode");
             }
             c.modes = std::move(ids);
         },
         [](const ExperimentConfig& c) { return join(c.modes); }},
        {"seeds", "random seeds",
         [](ExperimentConfig& c, const std::string& v) {
             c.seeds.clear();
             for (const auto& s : split_list(v)) {
                 const long long x = to_int("seeds", s);
                 if (x < 0) bad("seeds", s, "must be non-negative");
                 c.seeds.push_back(static_cast<std::uint64_t>(x));
             }
         },
         [](const ExperimentConfig& c) { return join_num(c.seeds); }},
        {"split_offsets", "chronological split shifts in percent of the window count",
         [](ExperimentConfig& c, const std::string& v) {
             c.split_offsets.clear();
             for (const auto& s : split_list(v)) {
                 const long long x = to_int("split_offsets", s);
                 if (x < -50 || x > 10) bad("split_offsets", s, "must lie in [-50, 10]");
                 c.split_offsets.push_back(static_cast<int>(x));
             }
         },
         [](const ExperimentConfig& c) { return join_num(c.split_offsets); }},
        {"out_dir", "output directory (overridden by --out)",
         [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; },
         [](const ExperimentConfig& c) { return c.out_dir.string(); }},
        {"threads", "worker threads, capped by TOPOATTN_THREADS",
         [](ExperimentConfig& c, const std::string& v) {
             const long long x = to_int("threads", v);
             if (x < 1) bad("threads", v, "must be at least 1");
             c.threads = static_cast<int>(x);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.threads); }},
        {"co2_csv", "timestamp,value monthly CO2 series",
         [](ExperimentConfig& c, const std::string& v) { c.data.co2 = v; },
         [](const ExperimentConfig& c) { return c.data.co2.string(); }},
        {"sp500_csv", "timestamp,value daily close prices",
         [](ExperimentConfig& c, const std::string& v) { c.data.sp500 = v; },
         [](const ExperimentConfig& c) { return c.data.sp500.string(); }},
        {"ims1_csv", "snapshot,channel,rms,std,kurt for IMS set 1",
         [](ExperimentConfig& c, const std::string& v) { c.data.ims1 = v; },
         [](const ExperimentConfig& c) { return c.data.ims1.string(); }},
        {"ims2_csv", "snapshot,channel,rms,std,kurt for IMS set 2",
         [](ExperimentConfig& c, const std::string& v) { c.data.ims2 = v; },
         [](const ExperimentConfig& c) { return c.data.ims2.string(); }},
        {"epochs", "learned-strength training epochs",
         [](ExperimentConfig& c, const std::string& v) {
             const long long x = to_int("epochs", v);
             if (x < 1) bad("epochs", v, "must be at least 1");
             c.protocol.training.epochs = static_cast<int>(x);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.protocol.training.epochs); }},
        {"learning_rate", "learned-strength step size",
         [](ExperimentConfig& c, const std::string& v) {
             const double x = to_real("learning_rate", v);
             if (!(x > 0.0)) bad("learning_rate", v, "must be positive");
             c.protocol.training.learning_rate = x;
         },
         [](const ExperimentConfig& c) { return real(c.protocol.training.learning_rate); }},
        {"weight_decay", "learned-strength L2 penalty",
         [](ExperimentConfig& c, const std::string& v) {
             const double x = to_real("weight_decay", v);
             if (x < 0.0) bad("weight_decay", v, "must be non-negative");
             c.protocol.training.weight_decay = x;
         },
         [](const ExperimentConfig& c) { return real(c.protocol.training.weight_decay); }},
        {"patience", "early-stopping patience in epochs",
         [](ExperimentConfig& c, const std::string& v) {
             const long long x = to_int("patience", v);
             if (x < 1) bad("patience", v, "must be at least 1");
             c.protocol.training.patience = static_cast<int>(x);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.protocol.training.patience); }},
        {"batch_size", "minibatch size for learned strengths",
         [](ExperimentConfig& c, const std::string& v) {
             const long long x = to_int("batch_size", v);
             if (x < 1) bad("batch_size", v, "must be at least 1");
             c.protocol.training.batch_size = static_cast<int>(x);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.protocol.training.batch_size); }},
        {"aet_directions", "anchored Euler transform directions",
         [](ExperimentConfig& c, const std::string& v) {
             const long long x = to_int("aet_directions", v);
             if (x < 1) bad("aet_directions", v, "must be at least 1");
             c.protocol.aet_directions = static_cast<int>(x);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.protocol.aet_directions); }},
        {"aet_thresholds", "anchored Euler transform thresholds",
         [](ExperimentConfig& c, const std::string& v) {
             const long long x = to_int("aet_thresholds", v);
             if (x < 1) bad("aet_thresholds", v, "must be at least 1");
             c.protocol.aet_thresholds = static_cast<int>(x);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.protocol.aet_thresholds); }},
        {"exact_cap", "token cap for exact persistence",
         [](ExperimentConfig& c, const std::string& v) {
             const long long x = to_int("exact_cap", v);
             if (x < 2) bad("exact_cap", v, "must be at least 2");
             c.protocol.exact.cap = static_cast<int>(x);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.protocol.exact.cap); }},
        {"exact_edge_quantile", "edge-length quantile for the truncated Rips filtration",
         [](ExperimentConfig& c, const std::string& v) {
             const double x = to_real("exact_edge_quantile", v);
             if (!(x > 0.0 && x <= 1.0)) bad("exact_edge_quantile", v, "must lie in (0, 1]");
             c.protocol.exact.edge_quantile = x;
         },
         [](const ExperimentConfig& c) { return real(c.protocol.exact.edge_quantile); }},
        {"guard_margin", "validation improvement the local residual must clear",
         [](ExperimentConfig& c, const std::string& v) {
             const double x = to_real("guard_margin", v);
             if (x < 0.0) bad("guard_margin", v, "must be non-negative");
             c.protocol.guard_margin = x;
         },
         [](const ExperimentConfig& c) { return real(c.protocol.guard_margin); }},
        {"force_guard_reject", "never accept the local residual",
         [](ExperimentConfig& c, const std::string& v) { c.protocol.force_guard_reject = to_bool("force_guard_reject", v); },
         [](const ExperimentConfig& c) { return std::string(c.protocol.force_guard_reject ? "true" : "false"); }},
        {"local_form", "residual or logit",
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "residual") c.protocol.local_form = LocalForm::Residual;
             else if (v == "logit") c.protocol.local_form = LocalForm::Logit;
             else bad("local_form", v, "expected residual or logit");
         },
         [](const ExperimentConfig& c) {
             return std::string(c.protocol.local_form == LocalForm::Logit ? "logit" : "residual");
         }},
    };
    return k;
}

}  // namespace

ExperimentConfig default_experiment_config() {
    ExperimentConfig c;
    c.threads = static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
    return c;
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::InvalidParameter, "config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto& ks = keys();
        const auto it = std::find_if(ks.begin(), ks.end(), [&](const Key& k) { return k.name == key; });
        if (it == ks.end()) {
            throw Error(ErrorKind::InvalidParameter, "config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        it->set(base, value);
    }
    return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::InvalidInput, "cannot read config " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return parse_config(os.str());
}

std::string to_config_text(const ExperimentConfig& config) {
    std::string out;
    for (const auto& k : keys()) out += k.name + " = " + k.get(config) + '\n';
    return out;
}

std::string config_reference() {
    const ExperimentConfig d = default_experiment_config();
    std::string out;
    for (const auto& k : keys()) {
        out += "# " + k.help + '\n';
        out += k.name + " = " + k.get(d) + "\n\n";
    }
    return out;
}

int effective_threads(int requested) {
    int n = std::max(1, requested);
    if (const char* env = std::getenv("TOPOATTN_THREADS")) {
        try {
            const int cap = std::stoi(env);
            if (cap >= 1) n = std::min(n, cap);
        } catch (const std::exception&) {
            // ignore malformed values
        }
    }
    return n;
}

}  // namespace topoattn
