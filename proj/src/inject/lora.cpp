#include "bkdattr/inject/lora.hpp"

#include <random>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/ops.hpp"
#include "bkdattr/core/util.hpp"

namespace bkd {

void attach_lora(Transformer& model, const LoraOptions& options, std::uint64_t seed) {
    require(options.rank > 0, "lora: rank must be positive");
    require(options.dropout >= 0.0f && options.dropout < 1.0f, "lora: dropout must be in [0, 1)");
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < model.config().n_layers; ++l) {
        for (const auto& slot : options.targets) {
            const std::string name = layer_weight_name(l, slot);
            const Tensor& w = model.weight(name);
            LoraAdapter a;
            a.rank = options.rank;
            a.alpha = options.alpha;
            a.dropout = options.dropout;
            a.down = Tensor::randn({w.rows(), options.rank}, rng, 1.0f / std::sqrt(static_cast<float>(w.rows())));
            a.up = Tensor::zeros({options.rank, w.cols()});
            model.adapters()[name] = std::move(a);
        }
    }
    model.set_trainable(false);
}

void lora_merge(Transformer& model) {
    NoGradGuard no_grad;
    for (auto& [name, a] : model.adapters()) {
        Tensor& w = model.weight(name);
        require(a.down.ndim() == 2 && a.up.ndim() == 2 && a.down.rows() == w.rows() && a.up.cols() == w.cols() &&
                    a.down.cols() == a.up.rows() && a.down.cols() == a.rank,
                "lora_merge: adapter " + name + " shapes " + shape_str(a.down.shape()) + ", " +
                    shape_str(a.up.shape()) + " do not fit weight " + shape_str(w.shape()));
        Tensor delta = ops::matmul(a.down, a.up);
        auto dst = w.mutable_data();
        auto src = delta.data();
        const float s = a.scaling();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
    }
    model.adapters().clear();
}

}  // namespace bkd
