#include "umc/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace umc {

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    fail(ErrorKind::Config, "config key '" + key + "': '" + value + "' is not " + expected);
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
    N out{};
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        bad_value(key, value, "a number");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true") {
        return true;
    }
    if (value == "false") {
        return false;
    }
    bad_value(key, value, "true or false");
}

std::string number(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string flag(bool v) { return v ? "true" : "false"; }

std::string bucket_list(const std::vector<AspectRatio>& buckets) {
    std::string out;
    for (const AspectRatio b : buckets) {
        out += (out.empty() ? "" : ",") + to_string(b);
    }
    return out;
}

std::vector<AspectRatio> parse_bucket_list(const std::string& value) {
    std::vector<AspectRatio> out;
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) {
        out.push_back(parse_bucket(trim(item)));
    }
    return out;
}

struct Key {
    const char* name;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename N>
Key int_key(const char* name, N RunConfig::*field) {
    return {name, [field](const RunConfig& c) { return std::to_string(c.*field); },
            [field, name](RunConfig& c, const std::string& v) { c.*field = parse_number<N>(name, v); }};
}

Key real_key(const char* name, double RunConfig::*field) {
    return {name, [field](const RunConfig& c) { return number(c.*field); },
            [field, name](RunConfig& c, const std::string& v) { c.*field = parse_number<double>(name, v); }};
}

Key bool_key(const char* name, bool RunConfig::*field) {
    return {name, [field](const RunConfig& c) { return flag(c.*field); },
            [field, name](RunConfig& c, const std::string& v) { c.*field = parse_bool(name, v); }};
}

Key string_key(const char* name, std::string RunConfig::*field) {
    return {name, [field](const RunConfig& c) { return c.*field; },
            [field](RunConfig& c, const std::string& v) { c.*field = v; }};
}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        int_key("data_seed", &RunConfig::data_seed),
        int_key("dataset_size", &RunConfig::dataset_size),
        {"buckets", [](const RunConfig& c) { return bucket_list(c.buckets); },
         [](RunConfig& c, const std::string& v) { c.buckets = parse_bucket_list(v); }},
        int_key("patch", &RunConfig::patch),
        int_key("dim", &RunConfig::dim),
        int_key("heads", &RunConfig::heads),
        int_key("depth", &RunConfig::depth),
        int_key("time_dim", &RunConfig::time_dim),
        int_key("sampler_steps", &RunConfig::sampler_steps),
        {"selection", [](const RunConfig& c) { return to_string(c.selection); },
         [](RunConfig& c, const std::string& v) { c.selection = parse_selection_kind(v); }},
        int_key("selection_k", &RunConfig::selection_k),
        real_key("selection_p", &RunConfig::selection_p),
        real_key("selection_tau", &RunConfig::selection_tau),
        bool_key("joint_mask", &RunConfig::joint_mask),
        bool_key("block_noise_to_condition", &RunConfig::block_noise_to_condition),
        {"refiner", [](const RunConfig& c) { return to_string(c.refiner); },
         [](RunConfig& c, const std::string& v) { c.refiner = parse_refiner_variant(v); }},
        int_key("refiner_depth", &RunConfig::refiner_depth),
        bool_key("refiner_masked", &RunConfig::refiner_masked),
        string_key("stage_plan", &RunConfig::stage_plan),
        int_key("batch_size", &RunConfig::batch_size),
        real_key("learning_rate", &RunConfig::learning_rate),
        real_key("adam_beta1", &RunConfig::adam_beta1),
        real_key("adam_beta2", &RunConfig::adam_beta2),
        real_key("adam_eps", &RunConfig::adam_eps),
        int_key("init_seed", &RunConfig::init_seed),
        int_key("train_seed", &RunConfig::train_seed),
        int_key("log_interval", &RunConfig::log_interval),
        bool_key("log_wall_clock", &RunConfig::log_wall_clock),
        int_key("sample_seed", &RunConfig::sample_seed),
        int_key("eval_size", &RunConfig::eval_size),
        string_key("output_root", &RunConfig::output_root),
    };
    return table;
}

}  // namespace

SelectionStrategy RunConfig::strategy() const {
    SelectionStrategy s;
    s.kind = selection;
    s.k = selection_k;
    s.p = selection_p;
    s.tau = selection_tau;
    return s;
}

DiTConfig RunConfig::model() const {
    DiTConfig m;
    m.patch = patch;
    m.dim = dim;
    m.heads = heads;
    m.depth = depth;
    m.time_dim = time_dim;
    m.sampler_steps = sampler_steps;
    m.selection = strategy();
    m.joint_mask = joint_mask;
    m.block_noise_to_condition = block_noise_to_condition;
    m.refiner.variant = refiner;
    m.refiner.depth = refiner_depth;
    m.refiner.dim = dim;
    m.refiner.heads = heads;
    m.refiner.masked = refiner_masked;
    return m;
}

TrainOptions RunConfig::train_options() const {
    TrainOptions o;
    o.model = model();
    o.stages = parse_stage_plan(stage_plan);
    o.adam = {learning_rate, adam_beta1, adam_beta2, adam_eps};
    o.batch_size = batch_size;
    o.train_seed = train_seed;
    o.log_interval = log_interval;
    o.log_wall_clock = log_wall_clock;
    return o;
}

bool RunConfig::allows(AspectRatio bucket) const {
    for (const AspectRatio b : buckets) {
        if (b == bucket) {
            return true;
        }
    }
    return false;
}

void RunConfig::validate() const {
    model().validate();
    parse_stage_plan(stage_plan);
    training_seed_base(data_seed);
    require(dataset_size >= 1 && dataset_size <= (1 << 20), ErrorKind::Config, "dataset_size must lie in [1, 2^20]");
    require(!buckets.empty(), ErrorKind::Config, "buckets must name at least one aspect ratio");
    require(batch_size >= 1, ErrorKind::Config, "batch_size must be >= 1");
    require(learning_rate > 0.0 && adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 &&
                adam_eps > 0.0,
            ErrorKind::Config, "optimizer settings out of range");
    require(log_interval >= 1, ErrorKind::Config, "log_interval must be >= 1");
    require(eval_size >= 1, ErrorKind::Config, "eval_size must be >= 1");
    require(!output_root.empty(), ErrorKind::Config, "output_root must not be empty");
}

std::string RunConfig::serialize() const {
    std::string out;
    for (const Key& k : keys()) {
        out += std::string(k.name) + " = " + k.get(*this) + "\n";
    }
    return out;
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig c;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::Config, "config line " + std::to_string(lineno) + " lacks '='");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        require(seen.insert(key).second, ErrorKind::Config, "config key '" + key + "' given twice");
        bool known = false;
        for (const Key& k : keys()) {
            if (key == k.name) {
                k.set(c, value);
                known = true;
                break;
            }
        }
        require(known, ErrorKind::Config, "unknown config key '" + key + "' on line " + std::to_string(lineno));
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Config, "cannot open config '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string RunConfig::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(serialize())));
    return buf;
}

}  // namespace umc
