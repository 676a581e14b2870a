#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nasdet/arch.hpp"
#include "nasdet/dataset.hpp"
#include "nasdet/genotype.hpp"
#include "nasdet/loss_metrics.hpp"
#include "nasdet/optim.hpp"
#include "nasdet/supernet.hpp"

namespace nasdet {

struct SearchConfig {
    NetworkConfig network;
    std::vector<int> schedule{7, 4, 2, 1};  // alive ops per edge after each stage
    int epochs_per_stage = 70;
    int warmup_epochs = 20;  // weight-only epochs at the start of every stage
    int batch_size = 4;
    double arch_fraction = 0.6;  // share of the training set used for logits
    double weight_lr = 0.005;
    double weight_momentum = 0.9;
    double weight_decay = 1e-4;
    double arch_lr = 0.002;
    double arch_beta1 = 0.9;
    double arch_beta2 = 0.999;
    double arch_decay = 1e-3;
    bool staged = true;         // false: one stage, pruned straight to one op
    bool deep_supervision = true;
    bool check_losses = false;  // assert loss composition on every step

    /// Throws ConfigError.
    void validate() const;
    /// Schedule actually run, honoring `staged`.
    std::vector<int> effective_schedule() const;
    LossOptions loss_options() const;
};

/// One line of the search log: mean losses over one split in one epoch.
struct EpochRecord {
    int stage = 0;
    int epoch = 0;
    std::string split;  // "weight" or "arch"
    double loss_out = 0;
    double loss_bra = 0;
    double loss_total = 0;
    int alive_min = 0;
    int alive_max = 0;
};

/// Everything needed to continue a search exactly.
struct SearchState {
    SearchConfig cfg;
    std::uint64_t seed = 0;
    std::unique_ptr<Supernet> supernet;
    Sgd weight_opt{0, 0, 0};
    Adam arch_opt{0, 0, 0, 0, 0};
    int stage = 0;  // next stage to run
    int epoch = 0;  // next epoch within that stage
    std::vector<std::size_t> arch_split;
    std::vector<std::size_t> weight_split;
    std::vector<std::vector<int>> alive_history;  // alive count per edge at each stage boundary
};

struct SearchHooks {
    std::function<void(const EpochRecord&)> on_epoch;
    /// Called after every finished epoch and stage boundary.
    std::function<void(const SearchState&)> on_checkpoint;
};

/// Fresh state: supernet from the "init" substream, splits from "split".
SearchState init_search(const SearchConfig& cfg, const Dataset& data, std::uint64_t seed);

/// Weight-only pass over the weight split.
EpochRecord warmup_epoch(SearchState& state, const Dataset& data);
/// Alternating weight and logit steps over both splits; returns
/// {weight record, arch record}.
std::pair<EpochRecord, EpochRecord> bilevel_epoch(SearchState& state, const Dataset& data);

/// Keeps the top_k alive ops of every edge by logit, ties to the smaller op id.
/// Throws ScheduleError if top_k exceeds an edge's alive count or is < 1.
ArchWeights prune_edges(const ArchWeights& arch, int top_k);

/// Score of an edge's surviving op: its softmax weight over all 11 logits.
double edge_strength(const EdgeArch& edge);
CellGenotype decode_cell(const std::vector<EdgeArch>& edges, int n_intermediate);
/// Throws StateError unless every edge has exactly one alive op.
Genotype decode_genotype(const ArchWeights& arch);

/// Runs (or resumes, if `state` is given) the staged search to completion.
Genotype run_search(const SearchConfig& cfg, const Dataset& data, std::uint64_t seed, const SearchHooks& hooks = {},
                    SearchState* state = nullptr);

/// Alive count of every edge, normal cell first.
std::vector<int> alive_counts(const ArchWeights& arch);

}  // namespace nasdet
