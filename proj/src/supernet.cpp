#include "nasdet/supernet.hpp"

#include <string>

#include "nasdet/errors.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

void NetworkConfig::validate() const {
    if (in_channels != 1 && in_channels != 3) throw ConfigError("input channels must be 1 or 3");
    if (stem_channels < 1) throw ConfigError("stem width must be positive");
    if (n_normal < 1) throw ConfigError("at least one normal cell is required");
    if (n_reduction < 0 || n_reduction > 8) throw ConfigError("reduction cell count must be in 0..8");
    if (n_intermediate < 1) throw ConfigError("cells need at least one intermediate node");
    if (channel_multiplier < 1) throw ConfigError("channel multiplier must be positive");
    if (fusion_channels < 1) throw ConfigError("fusion width must be positive");
    const int d = size_divisor();
    if (height < d || width < d || height % d != 0 || width % d != 0) {
        throw ConfigError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                          " must be a positive multiple of " + std::to_string(d));
    }
}

std::vector<CellType> NetworkConfig::layout() const {
    std::vector<CellType> out;
    for (int i = 0; i < std::max(n_normal, n_reduction); ++i) {
        if (i < n_normal) out.push_back(CellType::Normal);
        if (i < n_reduction) out.push_back(CellType::Reduction);
    }
    return out;
}

// ---------------------------------------------------------------------------

Network::Network(const NetworkConfig& cfg, std::uint64_t seed, bool track_running_stats) : cfg_(cfg) {
    cfg_.validate();
    cfg_.options.track_running_stats = track_running_stats;

    Rng stem_rng(seed, "stem");
    stem_conv_ = register_module("stem", std::make_shared<Conv2d>(cfg_.in_channels, cfg_.stem_channels, 3,
                                                                  fn::ConvSpec{2, 1, 1, 1}, false, stem_rng));
    stem_norm_ = register_module("stem_norm", std::make_shared<BatchNorm2d>(cfg_.stem_channels, track_running_stats));

    int c_pp = cfg_.stem_channels, c_p = cfg_.stem_channels, width = cfg_.stem_channels;
    bool reduction_prev = false;
    std::vector<int> level_channels;
    for (CellType t : cfg_.layout()) {
        if (t == CellType::Reduction) width *= cfg_.channel_multiplier;
        CellSpec s{t, c_pp, c_p, width, cfg_.n_intermediate, reduction_prev, cfg_.options};
        specs_.push_back(s);
        c_pp = c_p;
        c_p = s.output_channels();
        reduction_prev = t == CellType::Reduction;
        if (t == CellType::Reduction || level_channels.empty()) level_channels.push_back(c_p);
    }

    fusion_ = register_module("fusion", std::make_shared<FusionHead>(level_channels, cfg_.fusion_channels,
                                                                     cfg_.gate_mode, cfg_.frozen_gates,
                                                                     derive_seed(seed, "fusion")));
    for (std::size_t i = 0; i < level_channels.size(); ++i) {
        branches_.push_back(register_module("branch" + std::to_string(i + 1),
                                            std::make_shared<BranchHead>(level_channels[i], 2 << i,
                                                                         derive_seed(seed, "branch", i))));
    }
}

Network::Network(const Network& other)
    : Module(),
      cfg_(other.cfg_),
      specs_(other.specs_),
      stem_conv_(other.stem_conv_),
      stem_norm_(other.stem_norm_),
      fusion_(other.fusion_),
      branches_(other.branches_) {
    register_module("stem", stem_conv_);
    register_module("stem_norm", stem_norm_);
    register_module("fusion", fusion_);
    for (std::size_t i = 0; i < branches_.size(); ++i) register_module("branch" + std::to_string(i + 1), branches_[i]);
}

NetworkOutput Network::forward(const Var& image) {
    const Shape s = image.shape();
    if (s.c != cfg_.in_channels || s.h != cfg_.height || s.w != cfg_.width) {
        throw ShapeError("network expects N x " + std::to_string(cfg_.in_channels) + " x " +
                         std::to_string(cfg_.height) + " x " + std::to_string(cfg_.width) + " input, got " +
                         to_string(s));
    }
    NetworkOutput out;
    const Var stem = stem_norm_->forward(stem_conv_->forward(image));
    Var c_pp = stem, c_p = stem;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        Var y = run_cell(i, c_pp, c_p);
        if (specs_[i].type == CellType::Reduction || out.pyramid.empty()) out.pyramid.push_back(y);
        c_pp = c_p;
        c_p = y;
    }
    out.fusion = fusion_->forward(out.pyramid);
    out.logits = out.fusion.logits;
    out.prediction = out.fusion.prediction;
    for (std::size_t i = 0; i < branches_.size(); ++i) {
        out.branch_logits.push_back(branches_[i]->logits(out.pyramid[i]));
        out.branches.push_back(fn::sigmoid(out.branch_logits.back()));
    }
    return out;
}

// ---------------------------------------------------------------------------

Supernet::Supernet(const NetworkConfig& cfg, std::uint64_t seed)
    : Network(cfg, seed, false), arch_(cfg.n_intermediate, derive_seed(seed, "arch")) {
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        cells_.push_back(register_module("cell" + std::to_string(i),
                                         std::make_shared<MixedCell>(specs_[i], derive_seed(seed, "cell", i))));
    }
}

void Supernet::set_arch(ArchWeights arch) {
    if (arch.n_intermediate() != cfg_.n_intermediate) throw StateError("architecture node count does not match");
    for (auto& cell : cells_) {
        const auto& target = arch.edges(cell->spec().type);
        auto& edges = cell->edges();
        if (target.size() != edges.size()) throw StateError("architecture edge count does not match");
        for (std::size_t e = 0; e < edges.size(); ++e) {
            if (target[e].logits.shape().numel() != kNumOps || target[e].alive.empty()) {
                throw StateError("edge " + std::to_string(e) + " has malformed logits or no alive op");
            }
            if (target[e].alive != edges[e].alive) cell->retain(int(e), target[e].alive);
        }
    }
    arch_ = std::move(arch);
}

Var Supernet::run_cell(std::size_t index, const Var& c_prev_prev, const Var& c_prev) {
    auto& cell = *cells_[index];
    const auto logits = arch_.alive_logits(cell.spec().type);
    return cell.forward(c_prev_prev, c_prev, logits);
}

// ---------------------------------------------------------------------------

DiscreteNetwork::DiscreteNetwork(const Genotype& genotype, const NetworkConfig& cfg, std::uint64_t seed)
    : Network(cfg, seed, true), genotype_(genotype) {
    validate(genotype, cfg_.n_intermediate);
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const auto& g = specs_[i].type == CellType::Normal ? genotype.normal : genotype.reduction;
        cells_.push_back(register_module("cell" + std::to_string(i),
                                         std::make_shared<DiscreteCell>(specs_[i], g, derive_seed(seed, "cell", i))));
    }
}

DiscreteNetwork::DiscreteNetwork(const Supernet& supernet, const Genotype& genotype)
    : Network(supernet), genotype_(genotype) {
    validate(genotype, cfg_.n_intermediate);
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const auto& g = specs_[i].type == CellType::Normal ? genotype.normal : genotype.reduction;
        cells_.push_back(
            register_module("cell" + std::to_string(i), std::make_shared<DiscreteCell>(*supernet.cells()[i], g)));
    }
}

Var DiscreteNetwork::run_cell(std::size_t index, const Var& c_prev_prev, const Var& c_prev) {
    return cells_[index]->forward(c_prev_prev, c_prev);
}

std::unique_ptr<Supernet> build_supernet(const NetworkConfig& cfg, std::uint64_t seed) {
    return std::make_unique<Supernet>(cfg, seed);
}

std::unique_ptr<DiscreteNetwork> build_discrete_network(const Genotype& genotype, const NetworkConfig& cfg,
                                                        std::uint64_t seed) {
    return std::make_unique<DiscreteNetwork>(genotype, cfg, seed);
}

}  // namespace nasdet
