#include "nasdet/genotype.hpp"

#include <string>

#include "nasdet/errors.hpp"

namespace nasdet {

void validate(const CellGenotype& cell, int n_intermediate) {
    if (int(cell.nodes.size()) != n_intermediate) {
        throw GenotypeError("expected " + std::to_string(n_intermediate) + " intermediate nodes, got " +
                            std::to_string(cell.nodes.size()));
    }
    for (int i = 0; i < n_intermediate; ++i) {
        const int node = i + kCellInputs;
        const auto& pairs = cell.nodes[std::size_t(i)];
        for (const auto& p : pairs) {
            if (p.source < 0 || p.source >= node) {
                throw GenotypeError("node " + std::to_string(node) + " has invalid source " + std::to_string(p.source));
            }
            const int id = op_id(p.op);
            if (id < 1 || id > kNumOps) throw GenotypeError("node " + std::to_string(node) + " has an unknown op");
        }
        if (pairs[0].source == pairs[1].source) {
            throw GenotypeError("node " + std::to_string(node) + " uses source " + std::to_string(pairs[0].source) +
                                " twice");
        }
    }
}

void validate(const Genotype& g, int n_intermediate) {
    validate(g.normal, n_intermediate);
    validate(g.reduction, n_intermediate);
}

CellGenotype uniform_cell(int n_intermediate, GenePair a, GenePair b) {
    CellGenotype c;
    c.nodes.assign(std::size_t(n_intermediate), {a, b});
    return c;
}

}  // namespace nasdet
