#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace xp {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << ")";
    return os.str();
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

class Tape;

// One value in the computation graph. Interior nodes carry a backward_fn that
// accumulates into their parents' grad buffers; leaves (parameters) carry none.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<double> grad;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backward_fn;
    const char* op = "leaf";
    Tape* owner = nullptr;

    std::size_t size() const { return value.size(); }

    void accumulate(const double* g, std::size_t n) {
        if (!has_grad) {
            grad.assign(size(), 0.0);
            has_grad = true;
        }
        for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
    }
};

// Value-semantics handle onto a graph node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor full(Shape shape, double v) {
        auto n = std::make_shared<TensorNode>();
        n->value.assign(numel(shape), v);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return full(Shape{}, v); }

    static Tensor from_data(Shape shape, std::vector<double> data) {
        if (numel(shape) != data.size())
            throw std::invalid_argument("xp: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        for (double v : n->value)
            if (!std::isfinite(v)) throw std::invalid_argument("xp: non-finite value in tensor data");
        return Tensor(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t ndim() const { return node_->shape.size(); }

    const std::vector<double>& data() const { return node_->value; }
    // Mutable access is for leaves only (optimizer updates, loaders); interior
    // tape nodes must never be written in place.
    std::vector<double>& data_mut() { return node_->value; }

    double item() const {
        if (size() != 1)
            throw std::invalid_argument("xp: item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool r) { node_->requires_grad = r; }

    bool has_grad() const { return node_->has_grad; }
    const std::vector<double>& grad() const {
        if (!node_->has_grad)
            throw std::runtime_error("xp: gradient not available; call Tape::backward first");
        return node_->grad;
    }
    void zero_grad() {
        node_->has_grad = false;
        node_->grad.clear();
    }

    Tensor detached_copy() const {
        auto n = std::make_shared<TensorNode>();
        n->shape = node_->shape;
        n->value = node_->value;
        return Tensor(std::move(n));
    }

    const std::shared_ptr<TensorNode>& node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

// Recording context for one forward/backward pass. Ops append result nodes in
// creation order, which is already topological: parents always precede children.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape() {
        if (active_ == this) active_ = nullptr;
    }

    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
        ~Scope() { active_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active() { return active_; }

    void record(const std::shared_ptr<TensorNode>& n) {
        n->owner = this;
        nodes_.push_back(n);
    }

    std::size_t size() const { return nodes_.size(); }
    std::size_t last_backward_visits() const { return last_visits_; }

    // Reverse sweep from a scalar loss. Every recorded node is visited exactly
    // once, in reverse creation order; a second call without reset is an error.
    void backward(const Tensor& loss) {
        if (backward_done_)
            throw std::runtime_error("xp: backward already ran on this tape; reset() first");
        if (loss.size() != 1)
            throw std::invalid_argument("xp: backward requires a scalar loss, got shape " +
                                        shape_str(loss.shape()));
        if (loss.node()->owner != this)
            throw std::invalid_argument("xp: loss tensor is not recorded on this tape");
        loss.node()->accumulate(&kOne, 1);
        last_visits_ = 0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            ++last_visits_;
            if ((*it)->has_grad && (*it)->backward_fn) (*it)->backward_fn();
        }
        backward_done_ = true;
    }

    void reset() {
        for (auto& n : nodes_) n->owner = nullptr;
        nodes_.clear();
        backward_done_ = false;
        last_visits_ = 0;
    }

private:
    static constexpr double kOne = 1.0;
    inline static thread_local Tape* active_ = nullptr;
    std::vector<std::shared_ptr<TensorNode>> nodes_;
    bool backward_done_ = false;
    std::size_t last_visits_ = 0;
};

inline void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x))
            throw std::runtime_error(std::string("xp: non-finite output of ") + op);
}

// Builds the result of a primitive: value computed by the caller, recorded on
// the active tape iff gradients can flow.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                          std::vector<Tensor> inputs,
                          const std::function<void(TensorNode*)>& attach_backward) {
    check_finite(op, value);
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    Tape* tape = Tape::active();
    bool needs_grad = false;
    for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
    if (tape && needs_grad) {
        n->requires_grad = true;
        for (auto& t : inputs) n->parents.push_back(t.node());
        attach_backward(n.get());
        tape->record(n);
    }
    return Tensor(std::move(n));
}

}  // namespace xp
