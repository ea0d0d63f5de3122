// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Each op records itself on the active tape
// when at least one operand requires a gradient.
//
// Broadcasting is limited to two cases: a one-element operand against any
// shape, and a length-n vector against the rows of an m x n matrix.

#pragma once

#include <cstddef>
#include <span>

#include "lmdetr/tensor.hpp"

namespace lmdetr::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
// Throws DomainError on any non-positive entry.
Tensor log(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor abs(const Tensor& x);

enum class Unary { relu, sigmoid, exp, log, neg, abs };
enum class Binary { add, sub, mul, div, maximum, minimum };
Tensor elementwise(Unary op, const Tensor& x);
Tensor elementwise(Binary op, const Tensor& a, const Tensor& b);

// Max-subtracted; `axis` counts from the front.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

// Normalises over the last extent; gain and bias are vectors of that extent.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Rows scaled to unit Euclidean norm.
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
// Flat-index selection; the result is a vector of indices.size() entries.
Tensor take(const Tensor& x, std::span<const std::size_t> indices);

}  // namespace lmdetr::ops
