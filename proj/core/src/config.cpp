#include "spcl/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace spcl {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::map<std::string, RunConfig::KeyInfo> make_registry() {
    using Type = RunConfig::Type;
    std::map<std::string, RunConfig::KeyInfo> r;
    auto add = [&](const std::string& key, Type type, const std::string& dflt, const std::string& help) {
        r[key] = RunConfig::KeyInfo{type, dflt, help};
    };

    add("data.canonical_scale", Type::Float, "1.5", "canonical frame side as a multiple of the model input side");

    add("aug.area_min", Type::Float, "0.25", "lower bound of the crop area fraction");
    add("aug.area_max", Type::Float, "1.0", "upper bound of the crop area fraction");
    add("aug.square", Type::Bool, "true", "square crops; false enables aspect-ratio jitter");
    add("aug.hflip_prob", Type::Float, "0.5", "horizontal flip probability");
    add("aug.aspect_min", Type::Float, "0.75", "aspect jitter lower bound (aug.square=false)");
    add("aug.aspect_max", Type::Float, "1.3333333333", "aspect jitter upper bound (aug.square=false)");

    add("model.input_size", Type::Int, "64", "model input side in pixels");
    add("model.channels", Type::String, "8,16,32", "channels per conv stage, comma separated");
    add("model.mean_of_sigmoids", Type::Bool, "false",
        "global probability as mean of per-location sigmoids instead of sigmoid of pooled logits");

    add("loss.primary", Type::String, "an", "bce|an|en|ep|epr");
    add("loss.consistency", Type::String, "none", "none|cl|scl");
    add("loss.gamma_warmup_epochs", Type::Int, "5", "epochs over which gamma anneals linearly 0 -> 1");
    add("loss.k", Type::Float, "2.5", "expected positives per image (mining budgets, EPR target)");
    add("loss.normalized_l2", Type::Bool, "false", "divide consistency l2 norms by sqrt(element count)");

    add("ema.mu", Type::Float, "0.8", "EMA momentum for both stores");
    add("ema.score_mu", Type::Float, "-1", "score-store momentum override; -1 inherits ema.mu");
    add("ema.heatmap_mu", Type::Float, "-1", "heatmap-store momentum override; -1 inherits ema.mu");

    add("store.precision", Type::String, "f32", "heatmap storage precision: f32|f16");
    add("store.topk", Type::Int, "0", "retain only the top-k channels per sample; 0 disables");
    add("store.topk_epoch", Type::Int, "5", "epoch after which top-k retention is applied");

    add("consistency.rolling_targets", Type::Bool, "false",
        "read consistency targets after the sample's own EMA update instead of before");

    add("train.epochs", Type::Int, "30", "training epochs");
    add("train.batch_size", Type::Int, "8", "samples per optimizer step");
    add("train.lr", Type::Float, "0.001", "base learning rate (cosine decayed)");
    add("train.weight_decay", Type::Float, "0", "decoupled weight decay");
    add("train.beta1", Type::Float, "0.9", "Adam beta1");
    add("train.beta2", Type::Float, "0.999", "Adam beta2");
    add("train.epsilon", Type::Float, "1e-8", "Adam epsilon");
    add("train.seed", Type::Int, "1", "global seed; the whole run is a function of it");
    add("train.threads", Type::Int, "1",
        "worker threads per batch; results are identical for any value");
    add("train.precision", Type::String, "f32", "compute precision: f32|f64");
    add("train.val_fraction", Type::Float, "0.2", "fraction of records held out for validation");
    add("train.split_seed", Type::Int, "1", "seed of the train/val split");
    add("train.freeze_backbone_epochs", Type::Int, "0",
        "train only the classification head for this many initial epochs");

    add("miner.dump_masks", Type::Bool, "false", "write per-epoch expected-positive CSVs to masks/");

    add("metrics.eleven_point_ap", Type::Bool, "false", "11-point interpolated AP instead of exact AP");

    return r;
}

void check_value(const std::string& key, const RunConfig::KeyInfo& info, const std::string& value) {
    try {
        size_t used = 0;
        switch (info.type) {
            case RunConfig::Type::Int:
                (void)std::stoll(value, &used);
                if (used != value.size()) throw std::invalid_argument(value);
                break;
            case RunConfig::Type::Float:
                (void)std::stod(value, &used);
                if (used != value.size()) throw std::invalid_argument(value);
                break;
            case RunConfig::Type::Bool:
                if (value != "true" && value != "false" && value != "1" && value != "0")
                    throw std::invalid_argument(value);
                break;
            case RunConfig::Type::String: break;
        }
    } catch (const std::exception&) {
        throw std::invalid_argument("config: invalid value '" + value + "' for key '" + key + "'");
    }
}

}  // namespace

const std::map<std::string, RunConfig::KeyInfo>& RunConfig::registry() {
    static const auto reg = make_registry();
    return reg;
}

RunConfig::RunConfig() {
    for (const auto& [key, info] : registry()) values_[key] = info.default_value;
}

bool RunConfig::is_known(const std::string& key) const { return registry().count(key) != 0; }

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = registry().find(key);
    if (it == registry().end())
        throw std::invalid_argument("config: unknown key '" + key + "'");
    const std::string v = trim(value);
    check_value(key, it->second, v);
    values_[key] = v;
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) + " of '" + path +
                                     "' is not key=value");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

const std::string& RunConfig::value_of(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const { return std::stoll(value_of(key)); }
double RunConfig::get_float(const std::string& key) const { return std::stod(value_of(key)); }
bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = value_of(key);
    return v == "true" || v == "1";
}
const std::string& RunConfig::get_string(const std::string& key) const { return value_of(key); }

std::vector<int64_t> RunConfig::get_int_list(const std::string& key) const {
    const std::string& v = value_of(key);
    std::vector<int64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw std::invalid_argument("config: '" + key + "' is not a comma-separated integer list");
        }
    }
    if (out.empty()) throw std::invalid_argument("config: '" + key + "' is empty");
    return out;
}

std::string RunConfig::echo() const {
    std::string out;
    for (const auto& [key, value] : values_) {
        out += key;
        out += '=';
        out += value;
        out += '\n';
    }
    return out;
}

RunConfig RunConfig::from_echo(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("config: malformed echo line '" + line + "'");
        cfg.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

}  // namespace spcl
