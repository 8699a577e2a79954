#include "ar/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace ar {

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

static std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
    node_->leaf = true;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor({1}, {v}, requires_grad);
}

const std::vector<double>& Tensor::grad() const {
    return node_->grad_buf();
}

void Tensor::zero_grad() {
    if (node_) node_->grad.assign(node_->value.size(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
}

void Tape::record(std::function<void()> backward_fn, std::shared_ptr<detail::Node> produced) {
    ops_.push_back(std::move(backward_fn));
    produced_.push_back(std::move(produced));
}

void Tape::clear() {
    ops_.clear();
    produced_.clear();
}

void Tape::backward(const Tensor& root) {
    if (!root.defined()) throw NumericError("backward on undefined tensor");
    if (root.size() != 1) {
        throw ShapeError("backward requires a scalar root, got " + shape_str(root.shape()));
    }
    if (!root.requires_grad()) return;  // constant: leaves keep their (zero) grads
    // Intermediate grads are scratch; reset them so repeated backward calls
    // accumulate only into leaves.
    for (auto& n : produced_) n->grad.assign(n->value.size(), 0.0);
    root.node()->grad_buf()[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

void check_finite(const Tensor& t, const char* ctx) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value in ") + ctx);
        }
    }
}

}  // namespace ar
