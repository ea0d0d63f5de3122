// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/nn.hpp"

#include <cmath>
#include <vector>

#include "lmdetr/errors.hpp"
#include "lmdetr/ops.hpp"

namespace lmdetr::nn {

Linear Linear::create(ParamRegistry& reg, const std::string& prefix, std::size_t in, std::size_t out,
                      bool with_bias, Placement where, Init weight_init) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = reg.add(prefix + ".weight", {in, out}, where.trainable, where.group, weight_init);
    if (with_bias) l.bias = reg.add(prefix + ".bias", {out}, where.trainable, where.group, Init::zeros());
    return l;
}

Tensor Linear::operator()(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != in) {
        throw DimensionError("linear layer expects width " + std::to_string(in) + ", got " + shape_str(x.shape()));
    }
    Tensor y = ops::matmul(x, weight);
    return bias.defined() ? ops::add(y, bias) : y;
}

LayerNorm LayerNorm::create(ParamRegistry& reg, const std::string& prefix, std::size_t width, Placement where) {
    LayerNorm n;
    n.gain = reg.add(prefix + ".gain", {width}, where.trainable, where.group, Init::ones());
    n.bias = reg.add(prefix + ".bias", {width}, where.trainable, where.group, Init::zeros());
    return n;
}

Tensor LayerNorm::operator()(const Tensor& x) const { return ops::layernorm(x, gain, bias, eps); }

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
    const std::size_t width = q.cols();
    if (k.cols() != width || v.rows() != k.rows()) {
        throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                             shape_str(v.shape()));
    }
    if (heads == 0 || width % heads != 0 || v.cols() % heads != 0) {
        throw DimensionError("attention: width " + std::to_string(width) + " not divisible into " +
                             std::to_string(heads) + " heads");
    }
    const std::size_t head_width = width / heads;
    const std::size_t value_width = v.cols() / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_width));
    if (heads == 1) {
        Tensor weights = ops::softmax(ops::scale(ops::matmul(q, ops::transpose(k)), inv_scale), 1);
        return ops::matmul(weights, v);
    }
    std::vector<Tensor> outputs;
    outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = ops::slice_cols(q, h * head_width, head_width);
        Tensor kh = ops::slice_cols(k, h * head_width, head_width);
        Tensor vh = ops::slice_cols(v, h * value_width, value_width);
        Tensor weights = ops::softmax(ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_scale), 1);
        outputs.push_back(ops::matmul(weights, vh));
    }
    return ops::concat_cols(outputs);
}

MultiHeadAttention MultiHeadAttention::create(ParamRegistry& reg, const std::string& prefix, std::size_t width,
                                              std::size_t heads, Placement where) {
    if (heads == 0 || width % heads != 0) {
        throw ConfigError(prefix + ": width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                          " heads");
    }
    MultiHeadAttention a;
    a.heads = heads;
    a.q = Linear::create(reg, prefix + ".q", width, width, true, where);
    // A key bias adds the same constant to every logit of a row, which the
    // softmax cancels; it is left out.
    a.k = Linear::create(reg, prefix + ".k", width, width, false, where);
    a.v = Linear::create(reg, prefix + ".v", width, width, true, where);
    a.o = Linear::create(reg, prefix + ".o", width, width, true, where);
    return a;
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key, const Tensor& value) const {
    return o(attention(q(query), k(key), v(value), heads));
}

FeedForward FeedForward::create(ParamRegistry& reg, const std::string& prefix, std::size_t width, std::size_t hidden,
                                Placement where) {
    FeedForward f;
    f.up = Linear::create(reg, prefix + ".up", width, hidden, true, where);
    f.down = Linear::create(reg, prefix + ".down", hidden, width, true, where);
    return f;
}

Tensor FeedForward::operator()(const Tensor& x) const { return down(ops::relu(up(x))); }

Tensor with_pos(const Tensor& x, const Tensor& pos) { return pos.defined() ? ops::add(x, pos) : x; }

EncoderBlock EncoderBlock::create(ParamRegistry& reg, const std::string& prefix, BlockShape shape, Placement where) {
    EncoderBlock b;
    b.norm1 = LayerNorm::create(reg, prefix + ".norm1", shape.width, where);
    b.attn = MultiHeadAttention::create(reg, prefix + ".attn", shape.width, shape.heads, where);
    b.norm2 = LayerNorm::create(reg, prefix + ".norm2", shape.width, where);
    b.ffn = FeedForward::create(reg, prefix + ".ffn", shape.width, shape.ffn, where);
    return b;
}

Tensor EncoderBlock::operator()(const Tensor& x, const Tensor& pos) const {
    Tensor h = norm1(x);
    Tensor qk = with_pos(h, pos);
    Tensor y = ops::add(x, attn(qk, qk, h));
    return ops::add(y, ffn(norm2(y)));
}

DecoderBlock DecoderBlock::create(ParamRegistry& reg, const std::string& prefix, BlockShape shape, Placement where) {
    DecoderBlock b;
    b.norm1 = LayerNorm::create(reg, prefix + ".norm1", shape.width, where);
    b.self_attn = MultiHeadAttention::create(reg, prefix + ".self_attn", shape.width, shape.heads, where);
    b.norm2 = LayerNorm::create(reg, prefix + ".norm2", shape.width, where);
    b.cross_attn = MultiHeadAttention::create(reg, prefix + ".cross_attn", shape.width, shape.heads, where);
    b.norm3 = LayerNorm::create(reg, prefix + ".norm3", shape.width, where);
    b.ffn = FeedForward::create(reg, prefix + ".ffn", shape.width, shape.ffn, where);
    return b;
}

Tensor DecoderBlock::operator()(const Tensor& tgt, const Tensor& query_pos, const Tensor& memory,
                                const Tensor& memory_pos) const {
    Tensor h = norm1(tgt);
    Tensor qk = with_pos(h, query_pos);
    Tensor x = ops::add(tgt, self_attn(qk, qk, h));
    h = norm2(x);
    x = ops::add(x, cross_attn(with_pos(h, query_pos), with_pos(memory, memory_pos), memory));
    return ops::add(x, ffn(norm3(x)));
}

}  // namespace lmdetr::nn
