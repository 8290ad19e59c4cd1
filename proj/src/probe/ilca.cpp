#include "bkdattr/probe/ilca.hpp"

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/util.hpp"

namespace bkd {

double IlcaMatrix::diagonal_mean() const {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[i][i];
    return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

double IlcaMatrix::off_diagonal_mean() const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < values.size(); ++i)
        for (std::size_t k = 0; k < values.size(); ++k)
            if (i != k) s += values[i][k], ++n;
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

double ilca(const Probe& probe, const HiddenDataset& h_k) {
    require(probe.dim() == h_k.dim, "ilca: probe width " + std::to_string(probe.dim()) + " differs from layer width " +
                                        std::to_string(h_k.dim));
    const auto test = h_k.indices(Split::kTest);
    require(!test.empty(), "ilca: empty test split");
    return accuracy(probe, h_k, test);
}

IlcaMatrix ilca_matrix(const std::vector<HiddenDataset>& per_layer, ProbeKind kind, const ProbeOptions& options,
                       int threads) {
    require(!per_layer.empty(), "ilca_matrix: no layers");
    const std::size_t L = per_layer.size();
    std::vector<Probe> probes(L);
    parallel_for(L, threads, [&](std::size_t i) {
        ProbeOptions o = options;
        o.seed = derive_seed(options.seed, static_cast<std::uint64_t>(per_layer[i].layer));
        probes[i] = train_probe(per_layer[i], kind, o);
    });
    IlcaMatrix m;
    m.values.assign(L, std::vector<double>(L, 0.0));
    for (const auto& h : per_layer) m.layers.push_back(h.layer);
    parallel_for(L * L, threads, [&](std::size_t idx) {
        m.values[idx / L][idx % L] = ilca(probes[idx / L], per_layer[idx % L]);
    });
    return m;
}

}  // namespace bkd
