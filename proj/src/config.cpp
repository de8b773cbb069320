#include "rapa/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rapa {

namespace {

const std::map<std::string, std::string>& registry() {
    static const std::map<std::string, std::string> defaults = {
        {"run.seed", "42"},

        // synthetic benchmark generator
        {"data.num_identities", "32"},
        {"data.cams", "2"},
        {"data.clips_per_id_per_cam", "3"},
        {"data.frames_per_clip", "8"},
        {"data.image_rows", "256"},
        {"data.image_cols", "128"},
        {"data.vertical_shift_range", "0.25"},
        {"data.occlusion_probability", "0.3"},
        {"data.noise_std", "0.02"},
        {"data.min_color_separation", "0.25"},
        {"data.camera_color_shift", "0.35"},
        {"data.clutter_rects", "3"},

        // model
        {"model.stage_channels", "16,32,64"},
        {"model.reduction", "4"},
        {"model.clip_len", "4"},
        {"model.use_parts", "true"},
        {"model.use_reg", "true"},
        {"model.use_temporal_scores", "true"},
        {"model.use_pose_rois", "true"},
        {"model.use_quality_select", "true"},
        {"model.shared_quality_attention", "true"},
        {"model.softmax_part_scores", "false"},
        {"model.attention_bn_running_eval", "false"},

        // optimization
        {"train.epochs", "60"},
        {"train.lr", "3.5e-4"},
        {"train.lr_decay_every", "20"},
        {"train.lr_decay_factor", "0.1"},
        {"train.weight_decay", "5e-4"},
        {"train.decoupled_decay", "false"},
        {"train.margin", "0.3"},
        {"train.lambda_reg", "3e-4"},
        {"train.p_identities", "4"},
        {"train.k_clips", "2"},
        {"train.augment", "true"},
        {"train.checkpoint_every", "20"},

        // retrieval protocol
        {"eval.ranks", "1,5,20"},
        {"eval.drop_remainder", "false"},
        {"eval.checkpoint", ""},

        // finite-difference verification
        {"gradcheck.step", "1e-5"},
        {"gradcheck.tolerance", "1e-4"},
        {"gradcheck.max_checks_per_param", "200"},

        // ablation sweep
        {"ablate.num_seeds", "3"},
        {"ablate.epochs", "10"},
    };
    return defaults;
}

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void unknown_key(const std::string& key) {
    std::ostringstream os;
    os << "unknown config key '" << key << "'; known keys:";
    for (const auto& [k, v] : registry()) os << "\n  " << k;
    throw std::invalid_argument(os.str());
}

}  // namespace

Config Config::defaults() {
    Config c;
    c.values_ = registry();
    return c;
}

Config Config::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path);
    Config c = defaults();
    std::string line, section;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                            ": malformed section header '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected 'key = value', got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        if (!section.empty()) key = section + "." + key;
        const std::string value = trim(line.substr(eq + 1));
        if (!c.values_.count(key)) unknown_key(key);
        c.values_[key] = value;
    }
    return c;
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

void Config::set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) unknown_key(key);
    values_[key] = value;
}

std::string Config::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) unknown_key(key);
    return it->second;
}

int64_t Config::get_int(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        size_t pos = 0;
        const int64_t x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + ": '" + v + "' is not an integer");
    }
}

double Config::get_double(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + ": '" + v + "' is not a number");
    }
}

bool Config::get_bool(const std::string& key) const {
    std::string v = get_string(key);
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument("config key " + key + ": '" + v + "' is not a boolean");
}

std::vector<int64_t> Config::get_int_list(const std::string& key) const {
    const std::string v = get_string(key);
    std::vector<int64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw std::invalid_argument("config key " + key + ": '" + item +
                                        "' is not an integer");
        }
    }
    if (out.empty())
        throw std::invalid_argument("config key " + key + ": empty list");
    return out;
}

std::string Config::dump() const {
    std::ostringstream os;
    std::string section;
    for (const auto& [key, value] : values_) {
        const auto dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) os << "\n";
            os << "[" << sec << "]\n";
            section = sec;
        }
        os << key.substr(dot + 1) << " = " << value << "\n";
    }
    return os.str();
}

void Config::write(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write config echo to " + path);
    f << dump();
}

}  // namespace rapa
