#pragma once

#include <vector>

#include "bkdattr/probe/probe.hpp"

namespace bkd {

// values[i][k]: accuracy of the layer-i probe on layer k's test split.
struct IlcaMatrix {
    std::vector<int> layers;
    std::vector<std::vector<double>> values;

    double diagonal_mean() const;
    double off_diagonal_mean() const;
};

// Fraction of correctly classified test-split rows of h_k.
double ilca(const Probe& probe, const HiddenDataset& h_k);

// One probe per layer (seeded per layer), each evaluated on every layer.
IlcaMatrix ilca_matrix(const std::vector<HiddenDataset>& per_layer, ProbeKind kind, const ProbeOptions& options = {},
                       int threads = 1);

}  // namespace bkd
