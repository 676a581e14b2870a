#pragma once

#include <memory>
#include <vector>

#include "nasdet/arch.hpp"
#include "nasdet/cell.hpp"
#include "nasdet/fusion.hpp"
#include "nasdet/genotype.hpp"

namespace nasdet {

struct NetworkConfig {
    int in_channels = 1;
    int stem_channels = 16;  // C0
    int n_normal = 4;
    int n_reduction = 4;
    int n_intermediate = 4;
    int height = 64;
    int width = 64;
    int channel_multiplier = 2;  // width factor applied at every reduction cell
    int fusion_channels = 32;    // C_f
    GateMode gate_mode = GateMode::PerLevel;
    bool frozen_gates = false;
    OpOptions options;

    int levels() const { return n_reduction + 1; }
    /// Inputs must divide by 2^(n_reduction + 2), i.e. 64 for the default.
    int size_divisor() const { return 1 << (n_reduction + 2); }
    /// Throws ConfigError.
    void validate() const;
    /// N1 R1 N2 R2 ... with any surplus cells of one type at the end.
    std::vector<CellType> layout() const;
};

struct NetworkOutput {
    std::vector<Var> pyramid;  // Fea_1..Fea_L
    FusionState fusion;
    Var logits;                      // N x 1 x H x W
    Var prediction;                  // sigmoid(logits)
    std::vector<Var> branch_logits;  // one per level, each N x 1 x H x W
    std::vector<Var> branches;       // sigmoid of each branch
};

/// Stem, stacked cells, fusion head and branch heads. Subclasses decide how a
/// cell is run.
class Network : public Module {
public:
    const NetworkConfig& config() const { return cfg_; }
    const std::vector<CellSpec>& cell_specs() const { return specs_; }

    /// Throws ShapeError if the image does not match the configured size.
    NetworkOutput forward(const Var& image);

    FusionHead& fusion() { return *fusion_; }

protected:
    Network(const NetworkConfig& cfg, std::uint64_t seed, bool track_running_stats);
    /// Shares stem and heads with `other`.
    Network(const Network& other);

    virtual Var run_cell(std::size_t index, const Var& c_prev_prev, const Var& c_prev) = 0;

    NetworkConfig cfg_;
    std::vector<CellSpec> specs_;

private:
    std::shared_ptr<Conv2d> stem_conv_;
    std::shared_ptr<BatchNorm2d> stem_norm_;
    std::shared_ptr<FusionHead> fusion_;
    std::vector<std::shared_ptr<BranchHead>> branches_;
};

class Supernet : public Network {
public:
    Supernet(const NetworkConfig& cfg, std::uint64_t seed);

    ArchWeights& arch() { return arch_; }
    const ArchWeights& arch() const { return arch_; }
    std::vector<std::shared_ptr<MixedCell>>& cells() { return cells_; }
    const std::vector<std::shared_ptr<MixedCell>>& cells() const { return cells_; }

    /// Replaces the logits and drops the parameters of ops no longer alive.
    void set_arch(ArchWeights arch);

protected:
    Var run_cell(std::size_t index, const Var& c_prev_prev, const Var& c_prev) override;

private:
    ArchWeights arch_;
    std::vector<std::shared_ptr<MixedCell>> cells_;
};

class DiscreteNetwork : public Network {
public:
    /// Fresh parameters; normalization tracks running statistics.
    DiscreteNetwork(const Genotype& genotype, const NetworkConfig& cfg, std::uint64_t seed);
    /// Shares every module with `supernet`; chosen ops must be alive there.
    DiscreteNetwork(const Supernet& supernet, const Genotype& genotype);

    const Genotype& genotype() const { return genotype_; }

protected:
    Var run_cell(std::size_t index, const Var& c_prev_prev, const Var& c_prev) override;

private:
    Genotype genotype_;
    std::vector<std::shared_ptr<DiscreteCell>> cells_;
};

std::unique_ptr<Supernet> build_supernet(const NetworkConfig& cfg, std::uint64_t seed);
std::unique_ptr<DiscreteNetwork> build_discrete_network(const Genotype& genotype, const NetworkConfig& cfg,
                                                        std::uint64_t seed);

}  // namespace nasdet
