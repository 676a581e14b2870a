#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "nasdet/config.hpp"
#include "nasdet/files.hpp"
#include "nasdet/search.hpp"
#include "nasdet/supernet.hpp"
#include "nasdet/train.hpp"

namespace nasdet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct SearchCheckpoint {
    SearchState state;
    std::vector<EpochRecord> log;  // every record written so far
    std::string digest;            // search_digest of state.cfg
    std::uint64_t data_digest = 0;
};

/// Writes everything needed to continue the search bit-for-bit, atomically.
void save_search_checkpoint(const fs::path& path, const SearchState& state, const std::vector<EpochRecord>& log,
                            std::uint64_t data_digest);
/// Rebuilds the supernet, logits, optimizer moments and position. Throws
/// StateError when `data` is not the dataset the search started on, or the
/// file is damaged.
SearchCheckpoint load_search_checkpoint(const fs::path& path, const Dataset& data);

/// Logits and position of a search checkpoint, readable without the data.
struct SearchSummary {
    SearchConfig cfg;
    std::uint64_t seed = 0;
    int stage = 0;  // stages finished
    int epoch = 0;
    ArchWeights arch;
    std::vector<std::vector<int>> alive_history;
};
SearchSummary read_search_summary(const fs::path& path);

/// A discrete network with its training position.
struct ModelCheckpoint {
    Genotype genotype;
    NetworkConfig network;
    RetrainConfig retrain;
    std::uint64_t seed = 0;
    std::uint64_t data_digest = 0;
    std::unique_ptr<DiscreteNetwork> net;
    RetrainState state;
};

void save_model_checkpoint(const fs::path& path, DiscreteNetwork& net, const RetrainConfig& retrain, std::uint64_t seed,
                           const RetrainState& state, std::uint64_t data_digest);
ModelCheckpoint load_model_checkpoint(const fs::path& path);

}  // namespace nasdet
