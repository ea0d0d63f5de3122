// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "lmdetr/errors.hpp"

namespace lmdetr {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto extent : shape) n *= extent;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto extent : shape) {
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                             " values");
    }
    storage_ = std::make_shared<Storage>();
    storage_->shape = std::move(shape);
    storage_->data = std::move(values);
    storage_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::filled(Shape shape, double value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t n_rows = rows.size();
    const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(n_rows * n_cols);
    for (const auto& row : rows) {
        if (row.size() != n_cols) throw DimensionError("ragged matrix literal");
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({n_rows, n_cols}, std::move(values));
}

Tensor::Storage& Tensor::checked() const {
    if (!storage_) throw ContractError("use of an undefined tensor");
    return *storage_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape()));
    return shape()[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape()));
    return shape()[1];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::data() const { return checked().data; }

std::span<double> Tensor::mutable_data() { return checked().data; }

double Tensor::item() const {
    const auto& s = checked();
    if (s.data.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(s.shape));
    return s.data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

bool Tensor::requires_grad() const { return checked().requires_grad; }

void Tensor::set_requires_grad(bool value) { checked().requires_grad = value; }

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const { return checked().grad; }

std::span<double> Tensor::grad_buffer() const {
    auto& s = checked();
    if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
    return s.grad;
}

void Tensor::clear_grad() {
    auto& s = checked();
    s.grad.clear();
    s.grad.shrink_to_fit();
}

Tensor Tensor::detach() const {
    const auto& s = checked();
    return Tensor(s.shape, s.data, false);
}

void Tape::record(const char* op, Tensor output, BackwardFn fn) {
    records_.push_back(Record{op, std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) throw ContractError("backward() on a loss that is not connected to the tape");
    Tensor seed = loss;
    seed.grad_buffer()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (it->output.has_grad()) it->fn();
    }
    records_.clear();
}

namespace {
thread_local Tape* current_tape = nullptr;
}

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }

TapeScope::~TapeScope() { current_tape = previous_; }

Tape* active_tape() { return current_tape; }

void backward(const Tensor& loss) {
    if (!current_tape) throw ContractError("backward() called with no active tape");
    current_tape->backward(loss);
}

}  // namespace lmdetr
