#include "nasdet/checkpoint.hpp"

#include <cstring>
#include <map>
#include <sstream>

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/map.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/vector.hpp>

#include "nasdet/errors.hpp"
#include "nasdet/genotype_io.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

namespace {

constexpr char kMagic[8] = {'N', 'A', 'S', 'D', 'E', 'T', 'C', 'K'};
constexpr std::uint8_t kSearchKind = 1;
constexpr std::uint8_t kModelKind = 2;

struct TensorBlob {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<Real> values;

    template <class A>
    void serialize(A& ar) {
        ar(n, c, h, w, values);
    }

    static TensorBlob from(const Tensor& t) {
        const auto v = t.values();
        return {t.shape().n, t.shape().c, t.shape().h, t.shape().w, std::vector<Real>(v.begin(), v.end())};
    }
    Tensor tensor() const {
        Tensor t(Shape{n, c, h, w});
        if (std::int64_t(values.size()) != t.numel()) throw StateError("checkpoint tensor size does not match its shape");
        std::copy(values.begin(), values.end(), t.values().begin());
        return t;
    }
};

struct AdamBlob {
    TensorBlob m, v;
    std::int64_t step = 0;

    template <class A>
    void serialize(A& ar) {
        ar(m, v, step);
    }
};

struct EdgeBlob {
    std::vector<int> alive;
    TensorBlob logits;

    template <class A>
    void serialize(A& ar) {
        ar(alive, logits);
    }
};

struct RecordBlob {
    int stage = 0, epoch = 0;
    std::string split;
    double loss_out = 0, loss_bra = 0, loss_total = 0;
    int alive_min = 0, alive_max = 0;

    template <class A>
    void serialize(A& ar) {
        ar(stage, epoch, split, loss_out, loss_bra, loss_total, alive_min, alive_max);
    }
};

using TensorMap = std::map<std::string, TensorBlob>;

template <class Payload>
void write_checkpoint(const fs::path& path, std::uint8_t kind, const Payload& write) {
    std::ostringstream body(std::ios::binary);
    {
        cereal::PortableBinaryOutputArchive ar(body);
        write(ar);
    }
    const std::string payload = body.str();
    std::ostringstream file(std::ios::binary);
    file.write(kMagic, sizeof kMagic);
    {
        cereal::PortableBinaryOutputArchive ar(file);
        ar(kCheckpointVersion, kind, fnv1a(payload));
    }
    file << payload;
    write_file_atomic(path, file.str());
}

/// Verifies the header and checksum and returns the payload stream.
std::istringstream open_checkpoint(const fs::path& path, std::uint8_t kind) {
    const std::string bytes = read_file(path);
    if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw StateError(path.string() + " is not a checkpoint");
    }
    std::istringstream in(bytes.substr(sizeof kMagic), std::ios::binary);
    std::uint32_t version = 0;
    std::uint8_t found = 0;
    std::uint64_t checksum = 0;
    try {
        cereal::PortableBinaryInputArchive ar(in);
        ar(version, found, checksum);
    } catch (const cereal::Exception&) {
        throw StateError(path.string() + " has a truncated header");
    }
    if (version != kCheckpointVersion) {
        throw StateError(path.string() + " has checkpoint version " + std::to_string(version) + ", expected " +
                         std::to_string(kCheckpointVersion));
    }
    if (found != kind) {
        throw StateError(path.string() + (kind == kSearchKind ? " is not a search checkpoint" : " is not a model checkpoint"));
    }
    const auto start = std::size_t(in.tellg());
    std::string payload = bytes.substr(sizeof kMagic + start);
    if (fnv1a(payload) != checksum) throw StateError(path.string() + " is damaged (checksum mismatch)");
    return std::istringstream(std::move(payload), std::ios::binary);
}

template <class Fn>
void read_payload(std::istringstream& in, const fs::path& path, Fn&& read) {
    try {
        cereal::PortableBinaryInputArchive ar(in);
        read(ar);
    } catch (const cereal::Exception& e) {
        throw StateError(path.string() + " could not be decoded: " + e.what());
    }
}

TensorMap params_of(const Module& m) {
    TensorMap out;
    for (const auto& p : m.named_parameters()) out.emplace(p.name, TensorBlob::from(p.var.value()));
    return out;
}

TensorMap buffers_of(Module& m) {
    TensorMap out;
    for (const auto& b : m.named_buffers()) out.emplace(b.name, TensorBlob::from(*b.tensor));
    return out;
}

void restore_params(Module& m, const TensorMap& saved) {
    const auto params = m.named_parameters();
    if (params.size() != saved.size()) {
        throw StateError("checkpoint holds " + std::to_string(saved.size()) + " parameters, the network has " +
                         std::to_string(params.size()));
    }
    for (auto p : params) {
        const auto it = saved.find(p.name);
        if (it == saved.end()) throw StateError("checkpoint lacks parameter " + p.name);
        Tensor t = it->second.tensor();
        if (t.shape() != p.var.shape()) throw StateError("parameter " + p.name + " changed shape");
        p.var.mutable_value() = std::move(t);
    }
}

void restore_buffers(Module& m, const TensorMap& saved) {
    const auto buffers = m.named_buffers();
    if (buffers.size() != saved.size()) throw StateError("checkpoint buffer count does not match the network");
    for (const auto& b : buffers) {
        const auto it = saved.find(b.name);
        if (it == saved.end()) throw StateError("checkpoint lacks buffer " + b.name);
        Tensor t = it->second.tensor();
        if (t.shape() != b.tensor->shape()) throw StateError("buffer " + b.name + " changed shape");
        *b.tensor = std::move(t);
    }
}

TensorMap sgd_state(const Sgd& opt) {
    TensorMap out;
    for (const auto& [name, v] : opt.state()) out.emplace(name, TensorBlob::from(v));
    return out;
}

void restore_sgd(Sgd& opt, const TensorMap& saved) {
    opt.state().clear();
    for (const auto& [name, blob] : saved) opt.state().emplace(name, blob.tensor());
}

std::string run_config_text(const SearchConfig& search, const RetrainConfig& retrain) {
    RunConfig cfg;
    cfg.search = search;
    cfg.retrain = retrain;
    return format_config(cfg);
}

RunConfig parse_stored_config(const std::string& text, const fs::path& path) {
    try {
        return parse_config(text);
    } catch (const ConfigError& e) {
        throw StateError(path.string() + " holds an unreadable configuration: " + e.what());
    }
}

}  // namespace

void save_search_checkpoint(const fs::path& path, const SearchState& state, const std::vector<EpochRecord>& log,
                            std::uint64_t data_digest) {
    if (!state.supernet) throw StateError("search state has no supernet");
    const std::string config = run_config_text(state.cfg, RetrainConfig{});
    const std::string digest = search_digest(state.cfg);

    std::vector<std::vector<EdgeBlob>> arch;
    for (CellType t : {CellType::Normal, CellType::Reduction}) {
        auto& cell = arch.emplace_back();
        for (const auto& e : state.supernet->arch().edges(t)) {
            EdgeBlob b;
            for (OpKind k : e.alive) b.alive.push_back(op_id(k));
            b.logits = TensorBlob::from(e.logits.value());
            cell.push_back(std::move(b));
        }
    }
    std::map<std::string, AdamBlob> adam;
    for (const auto& [name, slot] : state.arch_opt.state())
        adam.emplace(name, AdamBlob{TensorBlob::from(slot.m), TensorBlob::from(slot.v), slot.step});
    std::vector<RecordBlob> records;
    for (const auto& r : log)
        records.push_back({r.stage, r.epoch, r.split, r.loss_out, r.loss_bra, r.loss_total, r.alive_min, r.alive_max});
    std::vector<std::uint64_t> arch_split(state.arch_split.begin(), state.arch_split.end());
    std::vector<std::uint64_t> weight_split(state.weight_split.begin(), state.weight_split.end());

    write_checkpoint(path, kSearchKind, [&](auto& ar) {
        ar(config, digest, data_digest, state.seed, state.stage, state.epoch);
        ar(arch_split, weight_split, state.alive_history);
        ar(arch, params_of(*state.supernet), sgd_state(state.weight_opt), adam, records);
    });
}

namespace {

struct RawSearch {
    RunConfig cfg;
    std::string digest;
    std::uint64_t data_digest = 0, seed = 0;
    int stage = 0, epoch = 0;
    std::vector<std::uint64_t> arch_split, weight_split;
    std::vector<std::vector<int>> alive_history;
    std::vector<std::vector<EdgeBlob>> arch;
    TensorMap params, velocity;
    std::map<std::string, AdamBlob> adam;
    std::vector<RecordBlob> records;
};

RawSearch read_search(const fs::path& path) {
    auto in = open_checkpoint(path, kSearchKind);
    RawSearch r;
    std::string config;
    read_payload(in, path, [&](auto& ar) {
        ar(config, r.digest, r.data_digest, r.seed, r.stage, r.epoch);
        ar(r.arch_split, r.weight_split, r.alive_history);
        ar(r.arch, r.params, r.velocity, r.adam, r.records);
    });
    r.cfg = parse_stored_config(config, path);
    if (search_digest(r.cfg.search) != r.digest) {
        throw StateError(path.string() + " has an inconsistent configuration digest");
    }
    if (r.arch.size() != 2) throw StateError(path.string() + " has malformed architecture logits");
    return r;
}

ArchWeights arch_of(const RawSearch& r, const fs::path& path) {
    ArchWeights weights(r.cfg.search.network.n_intermediate, 0);
    for (CellType t : {CellType::Normal, CellType::Reduction}) {
        auto& edges = weights.edges(t);
        const auto& saved = r.arch[t == CellType::Normal ? 0 : 1];
        if (saved.size() != edges.size()) throw StateError(path.string() + " has the wrong number of edges");
        for (std::size_t e = 0; e < edges.size(); ++e) {
            edges[e].alive.clear();
            for (int id : saved[e].alive) edges[e].alive.push_back(op_from_id(id));
            Tensor logits = saved[e].logits.tensor();
            if (logits.shape() != edges[e].logits.shape()) throw StateError("edge logits changed shape");
            edges[e].logits.mutable_value() = std::move(logits);
        }
    }
    return weights;
}

}  // namespace

SearchCheckpoint load_search_checkpoint(const fs::path& path, const Dataset& data) {
    RawSearch r = read_search(path);
    if (dataset_digest(data) != r.data_digest) {
        throw StateError(path.string() + " was written for a different training set");
    }
    SearchCheckpoint out;
    out.digest = r.digest;
    out.data_digest = r.data_digest;
    SearchState& s = out.state;
    s = init_search(r.cfg.search, data, r.seed);
    if (std::vector<std::uint64_t>(s.arch_split.begin(), s.arch_split.end()) != r.arch_split ||
        std::vector<std::uint64_t>(s.weight_split.begin(), s.weight_split.end()) != r.weight_split) {
        throw StateError(path.string() + " records a different data split");
    }
    s.supernet->set_arch(arch_of(r, path));
    restore_params(*s.supernet, r.params);
    restore_sgd(s.weight_opt, r.velocity);
    s.arch_opt.state().clear();
    for (const auto& [name, slot] : r.adam)
        s.arch_opt.state().emplace(name, Adam::Slot{slot.m.tensor(), slot.v.tensor(), slot.step});
    s.stage = r.stage;
    s.epoch = r.epoch;
    s.alive_history = std::move(r.alive_history);
    for (const auto& x : r.records)
        out.log.push_back({x.stage, x.epoch, x.split, x.loss_out, x.loss_bra, x.loss_total, x.alive_min, x.alive_max});
    return out;
}

SearchSummary read_search_summary(const fs::path& path) {
    RawSearch r = read_search(path);
    SearchSummary out;
    out.cfg = r.cfg.search;
    out.seed = r.seed;
    out.stage = r.stage;
    out.epoch = r.epoch;
    out.arch = arch_of(r, path);
    out.alive_history = std::move(r.alive_history);
    return out;
}

void save_model_checkpoint(const fs::path& path, DiscreteNetwork& net, const RetrainConfig& retrain, std::uint64_t seed,
                           const RetrainState& state, std::uint64_t data_digest) {
    SearchConfig search;
    search.network = net.config();
    const std::string config = run_config_text(search, retrain);
    const std::string genotype = serialize_genotype(net.genotype());
    std::vector<std::vector<double>> history;
    for (const auto& r : state.history) history.push_back({double(r.epoch), r.loss_out, r.loss_bra, r.loss_total});
    write_checkpoint(path, kModelKind, [&](auto& ar) {
        ar(config, genotype, seed, data_digest, state.epoch, history);
        ar(params_of(net), buffers_of(net), sgd_state(state.opt));
    });
}

ModelCheckpoint load_model_checkpoint(const fs::path& path) {
    auto in = open_checkpoint(path, kModelKind);
    std::string config, genotype;
    ModelCheckpoint out;
    int epoch = 0;
    std::vector<std::vector<double>> history;
    TensorMap params, buffers, velocity;
    read_payload(in, path, [&](auto& ar) {
        ar(config, genotype, out.seed, out.data_digest, epoch, history);
        ar(params, buffers, velocity);
    });
    const RunConfig cfg = parse_stored_config(config, path);
    out.network = cfg.search.network;
    out.retrain = cfg.retrain;
    out.genotype = parse_genotype(genotype);
    out.net = build_discrete_network(out.genotype, out.network, out.seed);
    restore_params(*out.net, params);
    restore_buffers(*out.net, buffers);
    out.state = init_retrain(out.retrain);
    restore_sgd(out.state.opt, velocity);
    out.state.epoch = epoch;
    for (const auto& h : history) {
        if (h.size() != 4) throw StateError(path.string() + " has a malformed training history");
        out.state.history.push_back({int(h[0]), h[1], h[2], h[3]});
    }
    return out;
}

}  // namespace nasdet
