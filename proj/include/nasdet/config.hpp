#pragma once

#include <string>
#include <string_view>

#include "nasdet/search.hpp"
#include "nasdet/synth.hpp"
#include "nasdet/train.hpp"

namespace nasdet {

/// Everything a command-line run reads from a config file.
struct RunConfig {
    SearchConfig search;  // includes the network
    RetrainConfig retrain;
    SynthSpec synth;

    /// Throws ConfigError.
    void validate() const;
};

/// Parses flat "key = value" lines; '#' starts a comment line. Unknown keys
/// and bad values raise ConfigError naming the line. Missing keys keep their
/// defaults.
RunConfig parse_config(std::string_view text);
/// Every key with its current value, in schema order; parse_config reads it
/// back unchanged.
std::string format_config(const RunConfig& cfg);
/// Key, type, default and meaning of every setting.
std::string config_schema();

/// Digest of the settings that shape the network. Genotypes and trained
/// models carry it so a mismatched retrain is refused.
std::string network_digest(const NetworkConfig& network);
/// Digest of the network and search settings, carried by search checkpoints.
std::string search_digest(const SearchConfig& search);

}  // namespace nasdet
