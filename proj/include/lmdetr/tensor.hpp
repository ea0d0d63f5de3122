// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors and the dynamic tape used for reverse-mode
// differentiation.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lmdetr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Handle to shared storage. Copies alias the same buffers, the same way a
// parameter in a registry and the operand captured by the tape are one
// object. Use detach() for an independent copy.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    bool defined() const { return storage_ != nullptr; }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    // Matrix helpers; throw DimensionError unless rank() == 2.
    std::size_t rows() const;
    std::size_t cols() const;
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t i) const { return data()[i]; }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    bool has_grad() const;
    std::span<const double> grad() const;
    // Zero-initialised on first access.
    std::span<double> grad_buffer() const;
    void clear_grad();

    Tensor detach() const;
    bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

private:
    struct Storage {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> storage_;

    Storage& checked() const;
};

// Ordered record of differentiable operations from one forward pass.
// Backward walks the records newest-first and calls each one exactly once.
class Tape {
public:
    using BackwardFn = std::function<void()>;

    void record(const char* op, Tensor output, BackwardFn fn);
    // Seeds d(loss)/d(loss) = 1 and propagates; clears the tape afterwards.
    void backward(const Tensor& loss);

    std::size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

private:
    struct Record {
        const char* op;
        Tensor output;
        BackwardFn fn;
    };
    std::vector<Record> records_;
};

// Makes a tape the recording target of the current thread for its lifetime.
// Operations run without an active tape produce constants.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

// backward() on the active tape.
void backward(const Tensor& loss);

}  // namespace lmdetr
