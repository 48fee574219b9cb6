#include "dsvm/config.hpp"

#include "dsvm/error.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace dsvm {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

int64_t parse_int(const std::string& key, const std::string& v) {
    int64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

template <size_t N>
std::array<int64_t, N> parse_depths(const std::string& key, const std::string& v) {
    auto items = split_list(v);
    if (items.size() != N) {
        throw ConfigError("config key '" + key + "': expected " + std::to_string(N) +
                          " comma-separated integers, got '" + v + "'");
    }
    std::array<int64_t, N> out{};
    for (size_t i = 0; i < N; ++i) out[i] = parse_int(key, items[i]);
    return out;
}

template <typename Seq>
std::string join(const Seq& seq) {
    std::string out;
    for (const auto& v : seq) {
        if (!out.empty()) out += ",";
        out += std::to_string(v);
    }
    return out;
}

}  // namespace

KeyValues parse_key_values(std::istream& is, const std::string& source) {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = source + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(where + ": empty key");
        if (!kv.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    }
    return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    return parse_key_values(is, path.string());
}

std::string format_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

std::string to_string(Schedule s) { return s == Schedule::cosine ? "cosine" : "clamp"; }

Schedule schedule_from_string(const std::string& s) {
    if (s == "cosine") return Schedule::cosine;
    if (s == "clamp") return Schedule::clamp;
    throw ConfigError("unknown schedule '" + s + "' (expected cosine or clamp)");
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
    TrainConfig cfg;
    cfg.model = network::ModelConfig::paper_scale();
    cfg.epochs = 300;
    cfg.batch_size = 32;
    return cfg;
}

void TrainConfig::validate() const {
    model.validate();
    loss.validate();
    augment.validate();
    require_config(epochs >= 1, "train.epochs must be >= 1");
    require_config(batch_size >= 1, "train.batch_size must be >= 1");
    require_config(t_max >= 1, "train.t_max must be >= 1");
    require_config(eta_min > 0 && base_lr > eta_min, "need base_lr > eta_min > 0");
    require_config(weight_decay >= 0, "train.weight_decay must be non-negative");
    require_config(grad_clip >= 0, "train.grad_clip must be non-negative");
    require_config(threads >= 1, "train.threads must be >= 1");
}

namespace {

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"model.in_channels", [](TrainConfig& c, auto& k, auto& v) { c.model.in_channels = parse_int(k, v); }},
        {"model.num_classes", [](TrainConfig& c, auto& k, auto& v) { c.model.num_classes = parse_int(k, v); }},
        {"model.base_dim", [](TrainConfig& c, auto& k, auto& v) { c.model.base_dim = parse_int(k, v); }},
        {"model.encoder_depths", [](TrainConfig& c, auto& k, auto& v) { c.model.encoder_depths = parse_depths<network::kLevels>(k, v); }},
        {"model.decoder_depths", [](TrainConfig& c, auto& k, auto& v) { c.model.decoder_depths = parse_depths<network::kLevels>(k, v); }},
        {"model.state_dim", [](TrainConfig& c, auto& k, auto& v) { c.model.state_dim = parse_int(k, v); }},
        {"model.expand", [](TrainConfig& c, auto& k, auto& v) { c.model.expand = parse_int(k, v); }},
        {"model.input_size", [](TrainConfig& c, auto& k, auto& v) { c.model.input_size = parse_int(k, v); }},
        {"model.skip", [](TrainConfig& c, auto&, auto& v) { c.model.skip = network::skip_mode_from_string(v); }},
        {"distill.teacher_detach", [](TrainConfig& c, auto& k, auto& v) { c.distill.teacher_detach = parse_bool(k, v); }},
        {"distill.proj_spatial_mode", [](TrainConfig& c, auto&, auto& v) { c.distill.proj_spatial_mode = distill::spatial_mode_from_string(v); }},
        {"distill.decoder_indexing", [](TrainConfig& c, auto&, auto& v) { c.distill.decoder_indexing = distill::decoder_indexing_from_string(v); }},
        {"loss.lambda1", [](TrainConfig& c, auto& k, auto& v) { c.loss.lambda1 = parse_double(k, v); }},
        {"loss.lambda2", [](TrainConfig& c, auto& k, auto& v) { c.loss.lambda2 = parse_double(k, v); }},
        {"loss.alpha", [](TrainConfig& c, auto& k, auto& v) { c.loss.alpha = parse_double(k, v); }},
        {"loss.beta", [](TrainConfig& c, auto& k, auto& v) { c.loss.beta = parse_double(k, v); }},
        {"loss.eps_clamp", [](TrainConfig& c, auto& k, auto& v) { c.loss.eps_clamp = parse_double(k, v); }},
        {"loss.dice_smooth", [](TrainConfig& c, auto& k, auto& v) { c.loss.dice_smooth = parse_double(k, v); }},
        {"augment.enabled", [](TrainConfig& c, auto& k, auto& v) { c.augment_enabled = parse_bool(k, v); }},
        {"augment.flip_horizontal_p", [](TrainConfig& c, auto& k, auto& v) { c.augment.flip_horizontal_p = parse_double(k, v); }},
        {"augment.flip_vertical_p", [](TrainConfig& c, auto& k, auto& v) { c.augment.flip_vertical_p = parse_double(k, v); }},
        {"augment.rotation_p", [](TrainConfig& c, auto& k, auto& v) { c.augment.rotation_p = parse_double(k, v); }},
        {"augment.rotation_choices", [](TrainConfig& c, auto& k, auto& v) {
             c.augment.rotation_choices.clear();
             for (const auto& item : split_list(v)) c.augment.rotation_choices.push_back(static_cast<int>(parse_int(k, item)));
         }},
        {"augment.continuous_rotation", [](TrainConfig& c, auto& k, auto& v) { c.augment.continuous_rotation = parse_bool(k, v); }},
        {"train.epochs", [](TrainConfig& c, auto& k, auto& v) { c.epochs = parse_int(k, v); }},
        {"train.batch_size", [](TrainConfig& c, auto& k, auto& v) { c.batch_size = parse_int(k, v); }},
        {"train.base_lr", [](TrainConfig& c, auto& k, auto& v) { c.base_lr = parse_double(k, v); }},
        {"train.weight_decay", [](TrainConfig& c, auto& k, auto& v) { c.weight_decay = parse_double(k, v); }},
        {"train.t_max", [](TrainConfig& c, auto& k, auto& v) { c.t_max = parse_int(k, v); }},
        {"train.eta_min", [](TrainConfig& c, auto& k, auto& v) { c.eta_min = parse_double(k, v); }},
        {"train.schedule", [](TrainConfig& c, auto&, auto& v) { c.schedule = schedule_from_string(v); }},
        {"train.grad_clip", [](TrainConfig& c, auto& k, auto& v) { c.grad_clip = parse_double(k, v); }},
        {"train.seed", [](TrainConfig& c, auto& k, auto& v) {
             const auto s = parse_int(k, v);
             require_config(s >= 0, "train.seed must be non-negative");
             c.seed = static_cast<uint64_t>(s);
         }},
        {"train.threads", [](TrainConfig& c, auto& k, auto& v) { c.threads = static_cast<int>(parse_int(k, v)); }},
        {"data.root", [](TrainConfig& c, auto&, auto& v) { c.data_root = v; }},
        {"data.train_split", [](TrainConfig& c, auto&, auto& v) { c.train_split = v; }},
        {"data.val_split", [](TrainConfig& c, auto&, auto& v) { c.val_split = v; }},
        {"data.normalize", [](TrainConfig& c, auto& k, auto& v) { c.normalize = parse_bool(k, v); }},
        {"eval.val_hd95", [](TrainConfig& c, auto& k, auto& v) { c.val_hd95 = parse_bool(k, v); }},
        {"output.dir", [](TrainConfig& c, auto&, auto& v) { c.output_dir = v; }},
    };
    return table;
}

}  // namespace

void TrainConfig::apply(const KeyValues& kv) {
    const auto& table = setters();
    for (const auto& [k, v] : kv) {
        auto it = table.find(k);
        if (it == table.end()) throw ConfigError("unknown config key '" + k + "'");
        it->second(*this, k, v);
    }
}

KeyValues TrainConfig::to_key_values() const {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return {
        {"model.in_channels", std::to_string(model.in_channels)},
        {"model.num_classes", std::to_string(model.num_classes)},
        {"model.base_dim", std::to_string(model.base_dim)},
        {"model.encoder_depths", join(model.encoder_depths)},
        {"model.decoder_depths", join(model.decoder_depths)},
        {"model.state_dim", std::to_string(model.state_dim)},
        {"model.expand", std::to_string(model.expand)},
        {"model.input_size", std::to_string(model.input_size)},
        {"model.skip", network::to_string(model.skip)},
        {"distill.teacher_detach", b(distill.teacher_detach)},
        {"distill.proj_spatial_mode", distill::to_string(distill.proj_spatial_mode)},
        {"distill.decoder_indexing", distill::to_string(distill.decoder_indexing)},
        {"loss.lambda1", fmt_double(loss.lambda1)},
        {"loss.lambda2", fmt_double(loss.lambda2)},
        {"loss.alpha", fmt_double(loss.alpha)},
        {"loss.beta", fmt_double(loss.beta)},
        {"loss.eps_clamp", fmt_double(loss.eps_clamp)},
        {"loss.dice_smooth", fmt_double(loss.dice_smooth)},
        {"augment.enabled", b(augment_enabled)},
        {"augment.flip_horizontal_p", fmt_double(augment.flip_horizontal_p)},
        {"augment.flip_vertical_p", fmt_double(augment.flip_vertical_p)},
        {"augment.rotation_p", fmt_double(augment.rotation_p)},
        {"augment.rotation_choices", join(augment.rotation_choices)},
        {"augment.continuous_rotation", b(augment.continuous_rotation)},
        {"train.epochs", std::to_string(epochs)},
        {"train.batch_size", std::to_string(batch_size)},
        {"train.base_lr", fmt_double(base_lr)},
        {"train.weight_decay", fmt_double(weight_decay)},
        {"train.t_max", std::to_string(t_max)},
        {"train.eta_min", fmt_double(eta_min)},
        {"train.schedule", to_string(schedule)},
        {"train.grad_clip", fmt_double(grad_clip)},
        {"train.seed", std::to_string(seed)},
        {"train.threads", std::to_string(threads)},
        {"data.root", data_root},
        {"data.train_split", train_split},
        {"data.val_split", val_split},
        {"data.normalize", b(normalize)},
        {"eval.val_hd95", b(val_hd95)},
        {"output.dir", output_dir},
    };
}

TrainConfig TrainConfig::from_text(const std::string& text) {
    std::istringstream is(text);
    TrainConfig cfg;
    cfg.apply(parse_key_values(is, "<checkpoint config>"));
    return cfg;
}

}  // namespace dsvm
