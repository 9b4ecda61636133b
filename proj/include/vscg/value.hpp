#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vscg/error.hpp"
#include "vscg/shape.hpp"

namespace vscg {

class Tape;
class Parameter;

namespace detail {
inline void require_finite(const std::vector<double>& v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i]))
            throw NumericError(std::string(what) + ": non-finite value at element " + std::to_string(i));
    }
}
} // namespace detail

/// Immutable dense tensor of 64-bit reals, optionally recorded on a Tape so
/// that gradients with respect to watched parameters are recoverable.
class DiffValue {
public:
    DiffValue() = default;

    DiffValue(Shape shape, std::vector<double> data)
        : DiffValue(shape, std::make_shared<const std::vector<double>>(std::move(data))) {}

    DiffValue(Shape shape, std::initializer_list<double> data)
        : DiffValue(shape, std::vector<double>(data)) {}

    DiffValue(Shape shape, std::shared_ptr<const std::vector<double>> data,
              Tape* tape = nullptr, int node = -1)
        : shape_(shape), data_(std::move(data)), tape_(tape), node_(node) {
        if (!data_) throw ContractError("DiffValue: null data");
        if (data_->size() != shape_.numel())
            throw ShapeError("DiffValue: data length " + std::to_string(data_->size()) +
                             " does not match shape " + shape_.str());
        detail::require_finite(*data_, "DiffValue");
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.rank(); }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    const std::vector<double>& data() const { return *data_; }
    const std::shared_ptr<const std::vector<double>>& data_ptr() const { return data_; }

    double scalar() const {
        if (size() != 1) throw ContractError("scalar() on value of shape " + shape_.str());
        return (*data_)[0];
    }

    Tape* tape() const { return tape_; }
    int node() const { return node_; }
    bool recorded() const { return tape_ != nullptr && node_ >= 0; }

private:
    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

/// A learnable tensor with a gradient accumulator. Values are copy-on-write:
/// updates replace the payload so recorded DiffValues stay valid.
class Parameter {
public:
    Parameter(std::string id, Shape shape, std::vector<double> value)
        : id_(std::move(id)), shape_(shape),
          value_(std::make_shared<const std::vector<double>>(std::move(value))),
          grad_(shape.numel(), 0.0) {
        if (value_->size() != shape_.numel())
            throw ShapeError("Parameter " + id_ + ": value length does not match shape " + shape_.str());
        detail::require_finite(*value_, id_.c_str());
    }

    const std::string& id() const { return id_; }
    const Shape& shape() const { return shape_; }
    std::size_t size() const { return grad_.size(); }

    const std::vector<double>& value() const { return *value_; }
    const std::shared_ptr<const std::vector<double>>& value_ptr() const { return value_; }

    void set_value(std::vector<double> v) {
        if (v.size() != shape_.numel())
            throw ShapeError("Parameter " + id_ + ": set_value length mismatch");
        detail::require_finite(v, id_.c_str());
        value_ = std::make_shared<const std::vector<double>>(std::move(v));
    }

    std::vector<double>& grad() { return grad_; }
    const std::vector<double>& grad() const { return grad_; }
    void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

    /// Read the parameter into a computation. With a tape, the result is a
    /// watched leaf (one leaf per tape, so repeated uses share adjoint storage
    /// and fan-out gradients accumulate). Without a tape, a plain constant.
    DiffValue use(Tape* tape);

private:
    std::string id_;
    Shape shape_;
    std::shared_ptr<const std::vector<double>> value_;
    std::vector<double> grad_;
};

/// Computation record for one forward pass. Nodes are appended in evaluation
/// order, which is already a topological order, so the backward sweep is a
/// single reverse walk. Confined to one thread.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int)>;

    int add_node(std::size_t adjoint_size, BackwardFn fn) {
        nodes_.push_back(Node{std::move(fn), adjoint_size});
        adj_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    /// Adjoint buffer of a node, allocated (zeroed) on first touch.
    std::vector<double>& accum(int node) {
        auto& a = adj_[static_cast<std::size_t>(node)];
        if (a.empty()) a.assign(nodes_[static_cast<std::size_t>(node)].size, 0.0);
        return a;
    }

    /// Adjoint of a node, or nullptr if no gradient reached it.
    const std::vector<double>* adjoint(int node) const {
        if (node < 0 || static_cast<std::size_t>(node) >= adj_.size()) return nullptr;
        const auto& a = adj_[static_cast<std::size_t>(node)];
        return a.empty() ? nullptr : &a;
    }

    /// Reverse sweep from a scalar loss recorded on this tape.
    void backward(const DiffValue& root) {
        if (root.tape() != this || root.node() < 0)
            throw ContractError("backward: loss is not recorded on this tape");
        if (root.size() != 1)
            throw ContractError("backward: loss must be scalar, got shape " + root.shape().str());
        if (ran_backward_) throw ContractError("backward: tape already swept");
        ran_backward_ = true;
        accum(root.node())[0] = 1.0;
        for (int i = root.node(); i >= 0; --i) {
            auto& node = nodes_[static_cast<std::size_t>(i)];
            if (node.fn && !adj_[static_cast<std::size_t>(i)].empty()) node.fn(*this, i);
        }
    }

    DiffValue watch(Parameter& p) {
        auto it = watched_.find(&p);
        int node;
        if (it != watched_.end()) {
            node = it->second;
        } else {
            node = add_node(p.size(), nullptr);
            watched_.emplace(&p, node);
        }
        return DiffValue(p.shape(), p.value_ptr(), this, node);
    }

    /// Gradient of the swept loss w.r.t. a watched parameter; nullptr when the
    /// loss did not depend on it.
    const std::vector<double>* grad_of(const Parameter& p) const {
        auto it = watched_.find(&p);
        if (it == watched_.end()) return nullptr;
        return adjoint(it->second);
    }

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        BackwardFn fn;
        std::size_t size;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> adj_;
    std::unordered_map<const Parameter*, int> watched_;
    bool ran_backward_ = false;
};

inline DiffValue Parameter::use(Tape* tape) {
    if (tape) return tape->watch(*this);
    return DiffValue(shape_, value_, nullptr, -1);
}

/// grad += tape adjoint, for every parameter the swept loss touched.
inline void accumulate_grads(const Tape& tape, std::span<const std::shared_ptr<Parameter>> params) {
    for (const auto& p : params) {
        const std::vector<double>* g = tape.grad_of(*p);
        if (!g) continue;
        auto& acc = p->grad();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (*g)[i];
    }
}

inline void zero_grads(std::span<const std::shared_ptr<Parameter>> params) {
    for (const auto& p : params) p->zero_grad();
}

} // namespace vscg
