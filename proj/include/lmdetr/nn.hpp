// SPDX-License-Identifier: Apache-2.0
//
// Transformer building blocks over registry-owned parameters. Every block is
// a plain struct of tensor handles; forward passes are const and reentrant.

#pragma once

#include <cstddef>
#include <string>

#include "lmdetr/params.hpp"
#include "lmdetr/tensor.hpp"

namespace lmdetr::nn {

// Where a block's parameters land and whether they train.
struct Placement {
    bool trainable = true;
    ParamGroup group = ParamGroup::head;
};

struct Linear {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out], undefined when built without bias
    std::size_t in = 0, out = 0;

    static Linear create(ParamRegistry& reg, const std::string& prefix, std::size_t in, std::size_t out,
                         bool with_bias, Placement where, Init weight_init = Init::xavier_uniform());
    Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
    Tensor gain, bias;
    double eps = 1e-5;

    static LayerNorm create(ParamRegistry& reg, const std::string& prefix, std::size_t width, Placement where);
    Tensor operator()(const Tensor& x) const;
};

// Scaled dot-product attention with `heads` equal column splits.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

struct MultiHeadAttention {
    Linear q, k, v, o;  // k has no bias
    std::size_t heads = 1;

    static MultiHeadAttention create(ParamRegistry& reg, const std::string& prefix, std::size_t width,
                                     std::size_t heads, Placement where);
    Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value) const;
};

struct FeedForward {
    Linear up, down;

    static FeedForward create(ParamRegistry& reg, const std::string& prefix, std::size_t width, std::size_t hidden,
                              Placement where);
    Tensor operator()(const Tensor& x) const;
};

struct BlockShape {
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t ffn = 256;
};

// Pre-norm encoder layer: x + attn(LN x), then x + ffn(LN x). An optional
// positional term is added to the attention queries and keys only.
struct EncoderBlock {
    LayerNorm norm1, norm2;
    MultiHeadAttention attn;
    FeedForward ffn;

    static EncoderBlock create(ParamRegistry& reg, const std::string& prefix, BlockShape shape, Placement where);
    Tensor operator()(const Tensor& x, const Tensor& pos = Tensor()) const;
};

// Pre-norm decoder layer: self-attention over queries, cross-attention into
// memory, feed-forward.
struct DecoderBlock {
    LayerNorm norm1, norm2, norm3;
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ffn;

    static DecoderBlock create(ParamRegistry& reg, const std::string& prefix, BlockShape shape, Placement where);
    Tensor operator()(const Tensor& tgt, const Tensor& query_pos, const Tensor& memory,
                      const Tensor& memory_pos = Tensor()) const;
};

// Added to a tensor when `pos` is defined.
Tensor with_pos(const Tensor& x, const Tensor& pos);

}  // namespace lmdetr::nn
