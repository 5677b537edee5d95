#include "finegrain/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fg {

namespace {

std::string fmt_double(double v) { return strfmt("%.17g", v); }

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": " + v);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        std::int64_t out = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": " + v);
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": " + v);
    }
}

}  // namespace

std::vector<std::int64_t> parse_int_list(const std::string& csv) {
    std::vector<std::int64_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(parse_int("list", item));
    return out;
}

GroupSpec RunConfig::group_spec() const {
    if (group_mode == "groups") return GroupSpec::fixed_groups(group_value);
    if (group_mode == "channels_per_group") return GroupSpec::channels_per_group(group_value);
    throw ConfigError("config: group_mode must be 'groups' or 'channels_per_group'");
}

FinetOptions RunConfig::finet_options() const {
    FinetOptions opt;
    opt.variant = variant;
    opt.group_spec = group_spec();
    opt.use_se = use_se;
    opt.cifar_adapted = cifar_adapted;
    opt.num_classes = num_classes;
    opt.affine = affine;
    opt.epsilon = static_cast<float>(epsilon);
    opt.momentum = static_cast<float>(norm_momentum);
    opt.seed = seed;
    return opt;
}

Schedule RunConfig::make_schedule(std::int64_t steps_per_epoch) const {
    if (schedule == "linear") return Schedule::linear_decay(lr, epochs * steps_per_epoch);
    if (schedule == "step") return Schedule::step_decay(lr, parse_int_list(milestones), lr_factor);
    throw ConfigError("config: schedule must be 'step' or 'linear'");
}

std::string RunConfig::serialize() const {
    std::string s;
    s += "variant=" + variant + "\n";
    s += "group_mode=" + group_mode + "\n";
    s += "group_value=" + std::to_string(group_value) + "\n";
    s += std::string("use_se=") + (use_se ? "true" : "false") + "\n";
    s += std::string("affine=") + (affine ? "true" : "false") + "\n";
    s += "epsilon=" + fmt_double(epsilon) + "\n";
    s += "norm_momentum=" + fmt_double(norm_momentum) + "\n";
    s += std::string("cifar_adapted=") + (cifar_adapted ? "true" : "false") + "\n";
    s += "num_classes=" + std::to_string(num_classes) + "\n";
    s += "lr=" + fmt_double(lr) + "\n";
    s += "sgd_momentum=" + fmt_double(sgd_momentum) + "\n";
    s += "weight_decay=" + fmt_double(weight_decay) + "\n";
    s += "schedule=" + schedule + "\n";
    s += "milestones=" + milestones + "\n";
    s += "lr_factor=" + fmt_double(lr_factor) + "\n";
    s += "batch_size=" + std::to_string(batch_size) + "\n";
    s += "epochs=" + std::to_string(epochs) + "\n";
    s += "seed=" + std::to_string(seed) + "\n";
    s += "dataset=" + dataset + "\n";
    s += "data_dir=" + data_dir + "\n";
    s += "train_limit=" + std::to_string(train_limit) + "\n";
    s += "test_limit=" + std::to_string(test_limit) + "\n";
    s += "checkpoint=" + checkpoint + "\n";
    s += "fused_checkpoint=" + fused_checkpoint + "\n";
    s += "metrics_csv=" + metrics_csv + "\n";
    return s;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "variant") variant = value;
    else if (key == "group_mode") group_mode = value;
    else if (key == "group_value") group_value = parse_int(key, value);
    else if (key == "use_se") use_se = parse_bool(key, value);
    else if (key == "affine") affine = parse_bool(key, value);
    else if (key == "epsilon") epsilon = parse_double(key, value);
    else if (key == "norm_momentum") norm_momentum = parse_double(key, value);
    else if (key == "cifar_adapted") cifar_adapted = parse_bool(key, value);
    else if (key == "num_classes") num_classes = parse_int(key, value);
    else if (key == "lr") lr = parse_double(key, value);
    else if (key == "sgd_momentum") sgd_momentum = parse_double(key, value);
    else if (key == "weight_decay") weight_decay = parse_double(key, value);
    else if (key == "schedule") schedule = value;
    else if (key == "milestones") milestones = value;
    else if (key == "lr_factor") lr_factor = parse_double(key, value);
    else if (key == "batch_size") batch_size = parse_int(key, value);
    else if (key == "epochs") epochs = parse_int(key, value);
    else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "dataset") dataset = value;
    else if (key == "data_dir") data_dir = value;
    else if (key == "train_limit") train_limit = parse_int(key, value);
    else if (key == "test_limit") test_limit = parse_int(key, value);
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "fused_checkpoint") fused_checkpoint = value;
    else if (key == "metrics_csv") metrics_csv = value;
    else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(strfmt("config: line %d is not key=value: %s", lineno, line.c_str()));
        cfg.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void RunConfig::apply_preset(const std::string& name) {
    if (name == "imagenet") {
        variant = "large";
        cifar_adapted = false;
        num_classes = 1000;
        lr = 0.2;
        schedule = "linear";
        weight_decay = 4e-5;
        batch_size = 512;
        epochs = 320;
        dataset = "imagenet";
        train_limit = 0;
        test_limit = 0;
    } else if (name == "cifar") {
        variant = "large";
        cifar_adapted = true;
        num_classes = 10;
        lr = 0.1;
        schedule = "step";
        milestones = "100,150";
        lr_factor = 10.0;
        weight_decay = 5e-4;
        batch_size = 128;
        epochs = 200;
        dataset = "cifar10";
        train_limit = 0;
        test_limit = 0;
    } else {
        throw ConfigError("config: unknown preset '" + name + "' (expected imagenet or cifar)");
    }
}

}  // namespace fg
