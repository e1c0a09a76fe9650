#include "pdet/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pdet {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct Field {
    std::string section;
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

[[noreturn]] void fail(const std::string& where, const std::string& msg) {
    throw ConfigError(where + ": " + msg);
}

double parse_double(const std::string& where, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) fail(where, "trailing characters in number '" + v + "'");
        return x;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(where, "expected a number, got '" + v + "'");
    }
}

long long parse_int(const std::string& where, const std::string& v) {
    long long x = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size())
        fail(where, "expected an integer, got '" + v + "'");
    return x;
}

bool parse_bool(const std::string& where, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    fail(where, "expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& where, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) fail(where, "empty element in list '" + v + "'");
        out.push_back(static_cast<int>(parse_int(where, item)));
    }
    if (out.empty()) fail(where, "empty list");
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, n);
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        auto add_u64 = [&](const std::string& sec, const std::string& key,
                           std::uint64_t ExperimentConfig::* member) {
            t[key] = Field{sec,
                           [member](ExperimentConfig& c, const std::string& w, const std::string& v) {
                               const long long x = parse_int(w, v);
                               if (x < 0) fail(w, "must be non-negative");
                               c.*member = static_cast<std::uint64_t>(x);
                           },
                           [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
        };
        auto add_int = [&](const std::string& sec, const std::string& key,
                           int ExperimentConfig::* member) {
            t[key] = Field{sec,
                           [member](ExperimentConfig& c, const std::string& w, const std::string& v) {
                               c.*member = static_cast<int>(parse_int(w, v));
                           },
                           [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
        };
        auto add_double = [&](const std::string& sec, const std::string& key,
                              double ExperimentConfig::* member) {
            t[key] = Field{sec,
                           [member](ExperimentConfig& c, const std::string& w, const std::string& v) {
                               c.*member = parse_double(w, v);
                           },
                           [member](const ExperimentConfig& c) { return format_double(c.*member); }};
        };
        auto add_bool = [&](const std::string& sec, const std::string& key,
                            bool ExperimentConfig::* member) {
            t[key] = Field{sec,
                           [member](ExperimentConfig& c, const std::string& w, const std::string& v) {
                               c.*member = parse_bool(w, v);
                           },
                           [member](const ExperimentConfig& c) {
                               return c.*member ? std::string("true") : std::string("false");
                           }};
        };
        auto add_string = [&](const std::string& sec, const std::string& key,
                              std::string ExperimentConfig::* member) {
            t[key] = Field{sec,
                           [member](ExperimentConfig& c, const std::string&, const std::string& v) {
                               c.*member = v;
                           },
                           [member](const ExperimentConfig& c) { return c.*member; }};
        };

        add_u64("experiment", "seed", &ExperimentConfig::seed);
        add_string("experiment", "out_dir", &ExperimentConfig::out_dir);

        add_int("stream", "num_classes", &ExperimentConfig::num_classes);
        t["tasks"] = Field{"stream",
                           [](ExperimentConfig& c, const std::string& w, const std::string& v) {
                               c.tasks = parse_int_list(w, v);
                           },
                           [](const ExperimentConfig& c) {
                               std::string s;
                               for (std::size_t i = 0; i < c.tasks.size(); ++i) {
                                   if (i) s += ",";
                                   s += std::to_string(c.tasks[i]);
                               }
                               return s;
                           }};
        add_int("stream", "train_per_task", &ExperimentConfig::train_per_task);
        add_int("stream", "eval_per_task", &ExperimentConfig::eval_per_task);
        add_int("stream", "objects_min", &ExperimentConfig::objects_min);
        add_int("stream", "objects_max", &ExperimentConfig::objects_max);
        add_double("stream", "noise_sigma", &ExperimentConfig::noise_sigma);
        add_double("stream", "box_min", &ExperimentConfig::box_min);
        add_double("stream", "box_max", &ExperimentConfig::box_max);

        add_int("model", "image_size", &ExperimentConfig::image_size);
        add_int("model", "patch_size", &ExperimentConfig::patch_size);
        add_int("model", "feature_dim", &ExperimentConfig::feature_dim);
        add_int("model", "heads", &ExperimentConfig::heads);
        add_int("model", "num_queries", &ExperimentConfig::num_queries);
        add_int("model", "prompt_len", &ExperimentConfig::prompt_len);
        add_int("model", "shared_pool_size", &ExperimentConfig::shared_pool_size);

        add_double("loss", "lambda_l1", &ExperimentConfig::lambda_l1);
        add_double("loss", "lambda_giou", &ExperimentConfig::lambda_giou);
        add_double("loss", "no_object_weight", &ExperimentConfig::no_object_weight);
        add_double("loss", "lambda_q", &ExperimentConfig::lambda_q);
        add_double("loss", "lambda_ddl", &ExperimentConfig::lambda_ddl);
        add_double("loss", "theta_ddl_degrees", &ExperimentConfig::theta_ddl_degrees);

        add_double("ppg", "tau_high", &ExperimentConfig::tau_high);
        add_double("ppg", "tau_low", &ExperimentConfig::tau_low);
        add_double("ppg", "theta_sim", &ExperimentConfig::theta_sim);
        add_int("ppg", "bank_capacity", &ExperimentConfig::bank_capacity);

        add_double("train", "learning_rate", &ExperimentConfig::learning_rate);
        add_int("train", "epochs_per_task", &ExperimentConfig::epochs_per_task);

        add_bool("toggles", "shared_pool", &ExperimentConfig::shared_pool);
        add_bool("toggles", "ppg", &ExperimentConfig::ppg);
        add_bool("toggles", "ddl", &ExperimentConfig::ddl);
        return t;
    }();
    return table;
}

const std::vector<std::string>& section_order() {
    static const std::vector<std::string> order = {
        "experiment", "stream", "model", "loss", "ppg", "train", "toggles"};
    return order;
}

void validate(const ExperimentConfig& c, const std::string& filename,
              const std::map<std::string, int>& key_lines) {
    auto where = [&](const std::string& key) {
        const auto it = key_lines.find(key);
        if (it == key_lines.end()) return filename + " (key '" + key + "')";
        return filename + ":" + std::to_string(it->second);
    };
    auto check = [&](bool ok, const std::string& key, const std::string& msg) {
        if (!ok) fail(where(key), msg);
    };

    check(c.num_classes >= 1, "num_classes", "need at least one class");
    int total = 0;
    for (int n : c.tasks) {
        check(n >= 1, "tasks", "each task must introduce at least one class");
        total += n;
    }
    check(total == c.num_classes, "tasks",
          "per-task class counts must sum to num_classes");
    check(c.train_per_task >= 1, "train_per_task", "must be >= 1");
    check(c.eval_per_task >= 1, "eval_per_task", "must be >= 1");
    check(c.objects_min >= 1 && c.objects_max >= c.objects_min, "objects_min",
          "need 1 <= objects_min <= objects_max");
    check(c.objects_max <= c.num_queries, "objects_max",
          "objects_max must not exceed num_queries");
    check(c.noise_sigma >= 0.0, "noise_sigma", "must be >= 0");
    check(c.box_min > 0.0 && c.box_max >= c.box_min && c.box_max < 1.0, "box_min",
          "need 0 < box_min <= box_max < 1");

    check(c.image_size >= 1 && c.patch_size >= 1 &&
              c.image_size % c.patch_size == 0,
          "patch_size", "image_size must be a multiple of patch_size");
    check(c.heads >= 1 && c.feature_dim % c.heads == 0, "heads",
          "feature_dim must be divisible by heads");
    check(c.num_queries >= 1, "num_queries", "must be >= 1");
    check(c.num_queries <= 20, "num_queries", "matching caps predictions at 20");
    check(c.prompt_len >= 2 && c.prompt_len % 2 == 0, "prompt_len",
          "prompt_len must be even (key/value prefix split)");
    check(c.shared_pool_size >= 1, "shared_pool_size", "must be >= 1");

    check(c.lambda_l1 >= 0.0, "lambda_l1", "must be >= 0");
    check(c.lambda_giou >= 0.0, "lambda_giou", "must be >= 0");
    check(c.no_object_weight >= 0.0, "no_object_weight", "must be >= 0");
    check(c.lambda_q >= 0.0, "lambda_q", "must be >= 0");
    check(c.lambda_ddl >= 0.0, "lambda_ddl", "must be >= 0");
    check(c.theta_ddl_degrees > 0.0 && c.theta_ddl_degrees <= 180.0,
          "theta_ddl_degrees", "must be in (0, 180]");

    check(c.tau_low > 0.0 && c.tau_low < c.tau_high && c.tau_high < 1.0,
          "tau_low", "need 0 < tau_low < tau_high < 1");
    check(c.theta_sim >= -1.0 && c.theta_sim <= 1.0, "theta_sim",
          "must be in [-1, 1]");
    check(c.bank_capacity >= 1, "bank_capacity", "must be >= 1");

    check(c.learning_rate > 0.0, "learning_rate", "must be > 0");
    check(c.epochs_per_task >= 1, "epochs_per_task", "must be >= 1");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& filename) {
    ExperimentConfig cfg;
    std::map<std::string, int> key_lines;

    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = filename + ":" + std::to_string(line_no);
        std::string s = line;
        if (const std::size_t hash = s.find('#'); hash != std::string::npos)
            s = s.substr(0, hash);
        s = trim(s);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') fail(where, "unterminated section header");
            section = trim(s.substr(1, s.size() - 2));
            bool known = false;
            for (const auto& name : section_order()) known = known || name == section;
            if (!known) fail(where, "unknown section [" + section + "]");
            continue;
        }
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos) fail(where, "expected 'key = value'");
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        if (section.empty()) fail(where, "key outside any [section]");
        const auto it = fields().find(key);
        if (it == fields().end() || it->second.section != section)
            fail(where, "unknown key '" + key + "' in [" + section + "]");
        if (key_lines.count(key)) fail(where, "duplicate key '" + key + "'");
        it->second.set(cfg, where, value);
        key_lines[key] = line_no;
    }
    validate(cfg, filename, key_lines);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return parse_config(text, path);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& section : section_order()) {
        out += "[" + section + "]\n";
        for (const auto& [key, field] : fields()) {
            if (field.section != section) continue;
            out += key + " = " + field.get(cfg) + "\n";
        }
        out += "\n";
    }
    return out;
}

}  // namespace pdet
