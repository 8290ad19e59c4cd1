#pragma once

#include "bkdattr/probe/probe.hpp"

namespace bkd::detail {

// Both classes present in the train split and widths consistent.
void check_trainable(const HiddenDataset& h);
// Untrained probe with optional z-scoring fitted on the train split.
Probe make_probe(const HiddenDataset& h, ProbeKind kind, bool standardize);

}  // namespace bkd::detail
