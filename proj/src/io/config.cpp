#include "nasdet/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>
#include <vector>

#include "nasdet/errors.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

void RunConfig::validate() const {
    search.validate();
    retrain.validate();
    synth.validate();
}

namespace {

enum class Section { Network, Search, Retrain, Data };

struct Field {
    Section section;
    std::string_view key;
    std::string_view type;
    std::string_view doc;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

std::string fmt_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

int to_int(std::string_view s) {
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("expected an integer, got '" + std::string(s) + "'");
    return v;
}

double to_double(std::string_view s) {
    double v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("expected a number, got '" + std::string(s) + "'");
    return v;
}

bool to_bool(std::string_view s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("expected true or false, got '" + std::string(s) + "'");
}

std::vector<std::string_view> split_list(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t end = s.find(',', start);
        if (end == std::string_view::npos) end = s.size();
        std::string_view item = s.substr(start, end - start);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        if (!item.empty()) out.push_back(item);
        start = end + 1;
    }
    return out;
}

#define NASDET_INT(sec, key, member, doc)                                          \
    Field {                                                                        \
        sec, key, "int", doc, [](RunConfig& c, std::string_view v) { c.member = to_int(v); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }            \
    }
#define NASDET_DOUBLE(sec, key, member, doc)                                          \
    Field {                                                                           \
        sec, key, "real", doc, [](RunConfig& c, std::string_view v) { c.member = to_double(v); }, \
            [](const RunConfig& c) { return fmt_double(c.member); }                   \
    }
#define NASDET_BOOL(sec, key, member, doc)                                          \
    Field {                                                                         \
        sec, key, "bool", doc, [](RunConfig& c, std::string_view v) { c.member = to_bool(v); }, \
            [](const RunConfig& c) { return fmt_bool(c.member); }                   \
    }

const std::vector<Field>& fields() {
    using S = Section;
    static const std::vector<Field> table{
        NASDET_INT(S::Network, "in_channels", search.network.in_channels, "image channels, 1 or 3"),
        NASDET_INT(S::Network, "stem_channels", search.network.stem_channels, "stem width C0"),
        NASDET_INT(S::Network, "n_normal", search.network.n_normal, "normal cells"),
        NASDET_INT(S::Network, "n_reduction", search.network.n_reduction, "reduction cells; levels = n_reduction + 1"),
        NASDET_INT(S::Network, "n_intermediate", search.network.n_intermediate, "intermediate nodes per cell"),
        NASDET_INT(S::Network, "height", search.network.height, "input height, a multiple of 2^(n_reduction+2)"),
        NASDET_INT(S::Network, "width", search.network.width, "input width, a multiple of 2^(n_reduction+2)"),
        NASDET_INT(S::Network, "channel_multiplier", search.network.channel_multiplier,
                   "width factor at each reduction cell"),
        NASDET_INT(S::Network, "fusion_channels", search.network.fusion_channels, "common level width C_f"),
        Field{S::Network, "gate_mode", "per_level|per_channel", "granularity of the fusion gates",
              [](RunConfig& c, std::string_view v) {
                  if (v == "per_level") c.search.network.gate_mode = GateMode::PerLevel;
                  else if (v == "per_channel") c.search.network.gate_mode = GateMode::PerChannel;
                  else throw ConfigError("gate_mode is per_level or per_channel, got '" + std::string(v) + "'");
              },
              [](const RunConfig& c) {
                  return std::string(c.search.network.gate_mode == GateMode::PerLevel ? "per_level" : "per_channel");
              }},
        NASDET_BOOL(S::Network, "frozen_gates", search.network.frozen_gates, "pin the fusion gates at 1"),
        NASDET_BOOL(S::Network, "double_separable", search.network.options.double_separable,
                    "apply each separable block twice"),
        NASDET_BOOL(S::Network, "pool_norm", search.network.options.pool_norm, "normalize after pooling ops"),
        NASDET_INT(S::Network, "se_ratio", search.network.options.se_ratio, "channel attention reduction ratio"),
        NASDET_INT(S::Network, "spatial_kernel", search.network.options.spatial_kernel, "spatial attention kernel"),
        NASDET_INT(S::Network, "dilation", search.network.options.dilation, "dilation of the dilated convolutions"),

        Field{S::Search, "schedule", "int list", "alive ops per edge after each stage",
              [](RunConfig& c, std::string_view v) {
                  c.search.schedule.clear();
                  for (auto item : split_list(v)) c.search.schedule.push_back(to_int(item));
              },
              [](const RunConfig& c) {
                  std::string s;
                  for (std::size_t i = 0; i < c.search.schedule.size(); ++i)
                      s += (i ? "," : "") + std::to_string(c.search.schedule[i]);
                  return s;
              }},
        NASDET_INT(S::Search, "epochs_per_stage", search.epochs_per_stage, "epochs in every search stage"),
        NASDET_INT(S::Search, "warmup_epochs", search.warmup_epochs, "weight-only epochs at the start of a stage"),
        NASDET_INT(S::Search, "batch_size", search.batch_size, "search batch size"),
        NASDET_DOUBLE(S::Search, "arch_fraction", search.arch_fraction, "share of training images for the logits"),
        NASDET_DOUBLE(S::Search, "weight_lr", search.weight_lr, "SGD learning rate for network weights"),
        NASDET_DOUBLE(S::Search, "weight_momentum", search.weight_momentum, "SGD momentum"),
        NASDET_DOUBLE(S::Search, "weight_decay", search.weight_decay, "SGD weight decay"),
        NASDET_DOUBLE(S::Search, "arch_lr", search.arch_lr, "Adam learning rate for the logits"),
        NASDET_DOUBLE(S::Search, "arch_beta1", search.arch_beta1, "Adam first-moment decay"),
        NASDET_DOUBLE(S::Search, "arch_beta2", search.arch_beta2, "Adam second-moment decay"),
        NASDET_DOUBLE(S::Search, "arch_decay", search.arch_decay, "Adam weight decay"),
        NASDET_BOOL(S::Search, "staged", search.staged, "false prunes straight to one op after one stage"),
        NASDET_BOOL(S::Search, "deep_supervision", search.deep_supervision, "add branch losses during search"),
        NASDET_BOOL(S::Search, "check_losses", search.check_losses, "assert loss composition on every step"),

        NASDET_INT(S::Retrain, "retrain_epochs", retrain.epochs, "retraining epochs"),
        NASDET_INT(S::Retrain, "retrain_batch_size", retrain.batch_size, "retraining batch size"),
        NASDET_DOUBLE(S::Retrain, "retrain_lr", retrain.lr, "retraining SGD learning rate"),
        NASDET_DOUBLE(S::Retrain, "retrain_momentum", retrain.momentum, "retraining SGD momentum"),
        NASDET_DOUBLE(S::Retrain, "retrain_decay", retrain.weight_decay, "retraining SGD weight decay"),
        NASDET_BOOL(S::Retrain, "retrain_deep_supervision", retrain.deep_supervision,
                    "add branch losses during retraining"),
        NASDET_DOUBLE(S::Retrain, "threshold", retrain.threshold, "binarization threshold for metrics"),

        NASDET_INT(S::Data, "synth_train", synth.n_train, "synthetic training images"),
        NASDET_INT(S::Data, "synth_test", synth.n_test, "synthetic test images"),
        Field{S::Data, "synth_kinds", "list of scratch|blob|crack", "defect kinds to draw",
              [](RunConfig& c, std::string_view v) {
                  c.synth.kinds.clear();
                  for (auto item : split_list(v)) c.synth.kinds.push_back(defect_from_name(item));
              },
              [](const RunConfig& c) {
                  std::string s;
                  for (std::size_t i = 0; i < c.synth.kinds.size(); ++i)
                      s += (i ? "," : "") + std::string(defect_name(c.synth.kinds[i]));
                  return s;
              }},
        NASDET_DOUBLE(S::Data, "synth_contrast_lo", synth.contrast_lo, "smallest defect contrast"),
        NASDET_DOUBLE(S::Data, "synth_contrast_hi", synth.contrast_hi, "largest defect contrast"),
        NASDET_DOUBLE(S::Data, "synth_texture_scale", synth.texture_scale, "background wavelength, pixels"),
        NASDET_DOUBLE(S::Data, "synth_texture_strength", synth.texture_strength, "background amplitude"),
        NASDET_DOUBLE(S::Data, "synth_noise", synth.noise, "pixel noise standard deviation"),
    };
    return table;
}

#undef NASDET_INT
#undef NASDET_DOUBLE
#undef NASDET_BOOL

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::string digest_of(const RunConfig& cfg, std::initializer_list<Section> sections) {
    std::string canon;
    for (const auto& f : fields()) {
        if (std::find(sections.begin(), sections.end(), f.section) == sections.end()) continue;
        canon += std::string(f.key) + "=" + f.get(cfg) + "\n";
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canon)));
    return buf;
}

}  // namespace

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    int line_no = 0;
    std::size_t pos = 0;
    std::vector<std::string> seen;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto& table = fields();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (it == table.end()) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
            throw ConfigError("line " + std::to_string(line_no) + ": key '" + std::string(key) + "' given twice");
        }
        seen.emplace_back(key);
        try {
            it->set(cfg, value);
        } catch (const ConfigError& e) {
            std::string_view what = e.what();
            const std::string_view prefix = "configuration error: ";
            if (what.substr(0, prefix.size()) == prefix) what.remove_prefix(prefix.size());
            throw ConfigError("line " + std::to_string(line_no) + ": " + std::string(key) + ": " + std::string(what));
        }
    }
    // synthetic images follow the network input
    cfg.synth.height = cfg.search.network.height;
    cfg.synth.width = cfg.search.network.width;
    cfg.synth.channels = cfg.search.network.in_channels;
    cfg.validate();
    return cfg;
}

std::string format_config(const RunConfig& cfg) {
    std::ostringstream out;
    const char* titles[] = {"network", "search", "retraining", "synthetic data"};
    int current = -1;
    for (const auto& f : fields()) {
        if (int(f.section) != current) {
            current = int(f.section);
            out << (current ? "\n" : "") << "# " << titles[current] << '\n';
        }
        out << f.key << " = " << f.get(cfg) << '\n';
    }
    return out.str();
}

std::string config_schema() {
    const RunConfig defaults;
    std::ostringstream out;
    out << "# key = default    [type] meaning\n";
    for (const auto& f : fields())
        out << f.key << " = " << f.get(defaults) << "    [" << f.type << "] " << f.doc << '\n';
    return out.str();
}

std::string network_digest(const NetworkConfig& network) {
    RunConfig cfg;
    cfg.search.network = network;
    return digest_of(cfg, {Section::Network});
}

std::string search_digest(const SearchConfig& search) {
    RunConfig cfg;
    cfg.search = search;
    return digest_of(cfg, {Section::Network, Section::Search});
}

}  // namespace nasdet
