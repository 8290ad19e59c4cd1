#pragma once

#include <map>
#include <vector>

#include "bkdattr/core/tensor.hpp"
#include "bkdattr/model/config.hpp"

namespace bkd {

enum class HookKind {
    kCaptureHidden,   // record h_i (output of block `layer`) at `position`
    kCaptureHead,     // record a_ij (head output after W_o) at `position`
    kSubstituteHead,  // a_i <- a_i - a_ij + vector at `position`
    kAblateHead,      // a_i <- a_i - a_ij at `position`
    kAddToHidden,     // h_i <- h_i + sign * vector at `position`, after the full block
    kCaptureMlpKey,   // record the MLP activation feeding W_down at `position`
};

inline constexpr int kLastPosition = -1;

// One activation intervention or capture. Negative positions count from the
// end of the sequence the hook is resolved against (the prompt, for
// generation and scoring).
struct HookSpec {
    HookKind kind = HookKind::kCaptureHidden;
    int layer = 0;
    int head = -1;
    Tensor vector;  // [d_model], substitution value or added vector
    float sign = 1.0f;
    int position = kLastPosition;

    static HookSpec capture_hidden(int layer, int position = kLastPosition);
    static HookSpec capture_head(HeadId head, int position = kLastPosition);
    static HookSpec substitute_head(HeadId head, std::vector<float> value, int position = kLastPosition);
    static HookSpec ablate_head(HeadId head, int position = kLastPosition);
    static HookSpec add_to_hidden(int layer, float sign, std::vector<float> vector, int position = kLastPosition);
    static HookSpec add_to_hidden(int layer, float sign, Tensor vector, int position = kLastPosition);
    static HookSpec capture_mlp_key(int layer, int position = kLastPosition);

    bool is_capture() const {
        return kind == HookKind::kCaptureHidden || kind == HookKind::kCaptureHead || kind == HookKind::kCaptureMlpKey;
    }
    HeadId head_id() const { return {layer, head}; }
};

struct ActivationRecord {
    std::map<int, std::vector<float>> hidden_states;
    std::map<HeadId, std::vector<float>> head_outputs;
    std::map<int, std::vector<float>> mlp_keys;
};

}  // namespace bkd
