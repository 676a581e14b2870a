#include "nasdet/genotype_io.hpp"

#include <charconv>
#include <set>
#include <sstream>
#include <vector>

#include "nasdet/errors.hpp"

namespace nasdet {

namespace {

bool digest_ok(std::string_view d) {
    if (d.empty() || d == "-") return false;
    for (char ch : d)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-')) return false;
    return true;
}

void write_cell(std::ostringstream& out, const char* name, const CellGenotype& cell) {
    out << "cell " << name << '\n';
    for (std::size_t n = 0; n < cell.nodes.size(); ++n) {
        out << "node " << n + kCellInputs << ':';
        for (const GenePair& p : cell.nodes[n]) out << " [" << p.source << ", " << op_name(p.op) << ']';
        out << '\n';
    }
}

std::vector<std::string_view> split_words(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

template <typename T>
T parse_number(std::string_view s, int line, const char* what) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError(line, std::string("bad ") + what + " '" + std::string(s) + "'");
    }
    return v;
}

/// Parses "node J: [s, Op] [s, Op]" for node `expected`.
std::array<GenePair, 2> parse_node(std::string_view rest, int expected, int line) {
    const std::size_t colon = rest.find(':');
    if (colon == std::string_view::npos) throw ParseError(line, "expected 'node <index>: [source, op] [source, op]'");
    std::string_view idx = rest.substr(0, colon);
    while (!idx.empty() && idx.back() == ' ') idx.remove_suffix(1);
    while (!idx.empty() && idx.front() == ' ') idx.remove_prefix(1);
    const int node = parse_number<int>(idx, line, "node index");
    if (node != expected) {
        throw ParseError(line, "expected node " + std::to_string(expected) + ", found node " + std::to_string(node));
    }
    std::array<GenePair, 2> pairs;
    std::string_view s = rest.substr(colon + 1);
    for (int k = 0; k < 3; ++k) {
        const std::size_t open = s.find('[');
        if (k == 2) {
            if (open != std::string_view::npos || s.find_first_not_of(" \t\r") != std::string_view::npos) {
                throw ParseError(line, "a node takes exactly two pairs");
            }
            break;
        }
        if (open == std::string_view::npos || s.substr(0, open).find_first_not_of(" \t") != std::string_view::npos) {
            throw ParseError(line, "expected '[source, op]'");
        }
        const std::size_t close = s.find(']', open);
        if (close == std::string_view::npos) throw ParseError(line, "unterminated pair");
        const std::string_view body = s.substr(open + 1, close - open - 1);
        const std::size_t comma = body.find(',');
        if (comma == std::string_view::npos) throw ParseError(line, "pair needs a source and an op");
        const auto src_words = split_words(body.substr(0, comma));
        const auto op_words = split_words(body.substr(comma + 1));
        if (src_words.size() != 1 || op_words.size() != 1) throw ParseError(line, "pair needs a source and an op");
        const int source = parse_number<int>(src_words[0], line, "source index");
        if (source < 0 || source >= node) {
            throw ParseError(line, "source " + std::to_string(source) + " does not precede node " +
                                       std::to_string(node));
        }
        const auto op = op_from_name(op_words[0]);
        if (!op) throw ParseError(line, "unknown operation '" + std::string(op_words[0]) + "'");
        pairs[std::size_t(k)] = {source, *op};
        s = s.substr(close + 1);
    }
    if (pairs[0].source == pairs[1].source) {
        throw ParseError(line, "node " + std::to_string(node) + " takes source " + std::to_string(pairs[0].source) +
                                   " twice");
    }
    return pairs;
}

}  // namespace

std::string serialize_genotype(const Genotype& g) {
    if (g.normal.nodes.empty() || g.normal.nodes.size() != g.reduction.nodes.size()) {
        throw GenotypeError("both cells need the same, non-zero node count");
    }
    validate(g, int(g.normal.nodes.size()));
    if (!g.config_digest.empty() && !digest_ok(g.config_digest)) {
        throw GenotypeError("config digest '" + g.config_digest + "' is not a single word");
    }
    std::ostringstream out;
    out << "# nasdet genotype\n";
    out << "format " << kGenotypeFormat << '\n';
    out << "config_digest " << (g.config_digest.empty() ? "-" : g.config_digest) << '\n';
    out << "seed " << g.seed << '\n';
    out << "schedule";
    for (int k : g.schedule) out << ' ' << k;
    out << '\n';
    write_cell(out, "normal", g.normal);
    write_cell(out, "reduction", g.reduction);
    return out.str();
}

Genotype parse_genotype(std::string_view doc) {
    Genotype g;
    bool have_format = false, have_digest = false, have_seed = false, have_schedule = false;
    std::set<std::string> cells_seen;
    CellGenotype* cell = nullptr;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= doc.size()) {
        std::size_t end = doc.find('\n', pos);
        if (end == std::string_view::npos) end = doc.size();
        const std::string_view line = doc.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        const auto words = split_words(line);
        if (words.empty() || words[0].starts_with('#')) {
            if (end == doc.size()) break;
            continue;
        }
        const std::string_view key = words[0];
        if (!have_format) {
            if (key != "format" || words.size() != 2) throw ParseError(line_no, "document must start with 'format <version>'");
            const int version = parse_number<int>(words[1], line_no, "format version");
            if (version != kGenotypeFormat) {
                throw ParseError(line_no, "unsupported format version " + std::to_string(version));
            }
            have_format = true;
        } else if (key == "config_digest") {
            if (words.size() != 2 || have_digest) throw ParseError(line_no, "expected one 'config_digest <word>'");
            g.config_digest = words[1] == "-" ? std::string() : std::string(words[1]);
            have_digest = true;
        } else if (key == "seed") {
            if (words.size() != 2 || have_seed) throw ParseError(line_no, "expected one 'seed <integer>'");
            g.seed = parse_number<std::uint64_t>(words[1], line_no, "seed");
            have_seed = true;
        } else if (key == "schedule") {
            if (have_schedule) throw ParseError(line_no, "schedule given twice");
            for (std::size_t i = 1; i < words.size(); ++i) g.schedule.push_back(parse_number<int>(words[i], line_no, "schedule entry"));
            have_schedule = true;
        } else if (key == "cell") {
            if (words.size() != 2 || (words[1] != "normal" && words[1] != "reduction")) {
                throw ParseError(line_no, "expected 'cell normal' or 'cell reduction'");
            }
            if (!cells_seen.insert(std::string(words[1])).second) {
                throw ParseError(line_no, "cell " + std::string(words[1]) + " given twice");
            }
            cell = words[1] == "normal" ? &g.normal : &g.reduction;
        } else if (key == "node") {
            if (!cell) throw ParseError(line_no, "node outside a cell section");
            const std::string_view rest = line.substr(line.find("node") + 4);
            cell->nodes.push_back(parse_node(rest, int(cell->nodes.size()) + kCellInputs, line_no));
        } else {
            throw ParseError(line_no, "unknown key '" + std::string(key) + "'");
        }
        if (end == doc.size()) break;
    }
    const int last = line_no + 1;
    if (!have_format) throw ParseError(last, "empty document");
    if (!have_digest || !have_seed || !have_schedule) throw ParseError(last, "missing config_digest, seed or schedule");
    if (cells_seen.size() != 2) throw ParseError(last, "both normal and reduction cells are required");
    if (g.normal.nodes.empty() || g.normal.nodes.size() != g.reduction.nodes.size()) {
        throw ParseError(last, "cells must have the same, non-zero node count");
    }
    return g;
}

std::string render_genotype(const Genotype& g) {
    auto label = [](int source) -> std::string {
        if (source == 0) return "c_{k-1}";
        if (source == 1) return "c_{k-2}";
        return std::to_string(source - kCellInputs);
    };
    std::ostringstream out;
    for (const auto& [name, cell] : {std::pair{"normal", &g.normal}, std::pair{"reduction", &g.reduction}}) {
        out << name << " cell\n";
        for (std::size_t n = 0; n < cell->nodes.size(); ++n)
            for (const GenePair& p : cell->nodes[n])
                out << "  " << label(p.source) << " --" << op_name(p.op) << "--> " << n << '\n';
        out << "  concat(";
        for (std::size_t n = 0; n < cell->nodes.size(); ++n) out << (n ? ", " : "") << n;
        out << ") + res(c_{k-1}) --> c_{k}\n";
    }
    return out.str();
}

std::string genotype_dot(const Genotype& g) {
    std::ostringstream out;
    out << "digraph genotype {\n  rankdir=LR;\n";
    for (const auto& [name, cell] : {std::pair{"normal", &g.normal}, std::pair{"reduction", &g.reduction}}) {
        const std::string p = name;
        out << "  subgraph cluster_" << p << " {\n    label=\"" << p << " cell\";\n";
        out << "    " << p << "_in0 [label=\"c_{k-1}\"];\n    " << p << "_in1 [label=\"c_{k-2}\"];\n";
        out << "    " << p << "_out [label=\"c_{k}\"];\n";
        auto id = [&](int source) {
            return source < kCellInputs ? p + "_in" + std::to_string(source)
                                        : p + "_n" + std::to_string(source - kCellInputs);
        };
        for (std::size_t n = 0; n < cell->nodes.size(); ++n) {
            out << "    " << p << "_n" << n << " [label=\"" << n << "\"];\n";
            for (const GenePair& e : cell->nodes[n])
                out << "    " << id(e.source) << " -> " << p << "_n" << n << " [label=\"" << op_name(e.op) << "\"];\n";
            out << "    " << p << "_n" << n << " -> " << p << "_out;\n";
        }
        out << "    " << p << "_in0 -> " << p << "_out [style=dashed, label=\"res\"];\n  }\n";
    }
    out << "}\n";
    return out.str();
}

}  // namespace nasdet
