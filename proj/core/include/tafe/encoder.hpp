#pragma once

#include <cstddef>
#include <string>

#include "tafe/params.hpp"
#include "tafe/pyramid.hpp"
#include "tafe/tensor.hpp"

namespace tafe {

inline constexpr double kLayerNormEps = 1e-5;

// Pre-norm transformer block over a token sequence (n, d, T, 1):
//   X  = F + W_o * Attn(LN1(F))
//   F' = X + FC2(GELU(FC1(LN2(X))))
// with per-head attention softmax(Q K^T / sqrt(d/h)) V. Token-wise linear
// maps are 1x1 convolutions.
struct EncoderShape {
    std::size_t d = 16;
    std::size_t heads = 4;
    std::size_t ffn_mult = 4;
};

void init_encoder_block(ParamStore& store, ParamInit& init, const std::string& prefix,
                        const EncoderShape& shape);

// Learned positional embedding "pos_embed" of shape (1, d, T, 1).
void init_positional_embedding(ParamStore& store, ParamInit& init, std::size_t d,
                               std::size_t tokens);

// Per-head attention probabilities (n, heads, T, T) for projected q and k.
Tensor attention_probabilities(const Tensor& q, const Tensor& k, std::size_t heads);

TokenSequence mhsa(const TokenSequence& f, const ParamStore& params, const std::string& prefix,
                   std::size_t heads);
TokenSequence encoder_block(const TokenSequence& f, const ParamStore& params,
                            const std::string& prefix, std::size_t heads);

namespace ad {
// Scaled dot-product attention over (n, d, T, 1) tensors, heads split along d.
Var multi_head_attention(Graph& g, Var q, Var k, Var v, std::size_t heads);
Var mhsa(Binding& b, const std::string& prefix, Var tokens, std::size_t heads);
Var encoder_block(Binding& b, const std::string& prefix, Var tokens, std::size_t heads);
}  // namespace ad

}  // namespace tafe
