#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ar {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string shape_str(const std::vector<int>& shape);

namespace detail {

struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily, same length as value
    bool requires_grad{false};
    bool leaf{true};

    std::size_t size() const { return value.size(); }
    std::vector<double>& grad_buf() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

/// Dense float64 tensor, row-major. Value semantics over a shared node so the
/// tape can keep inputs alive across the backward pass.
class Tensor {
  public:
    Tensor() = default;
    Tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::size_t size() const { return node_->value.size(); }

    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& mutable_data() { return node_->value; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const;
    double at(std::size_t i) const { return node_->value[i]; }

    std::shared_ptr<detail::Node> node() const { return node_; }

  private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;
    friend class Tape;
    friend Tensor make_output(std::vector<int> shape, std::vector<double> data,
                              bool requires_grad);
};

/// Ordered record of executed operations. Backward replays the record in
/// reverse, visiting each recorded op exactly once.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn, std::shared_ptr<detail::Node> produced);
    std::size_t num_ops() const { return ops_.size(); }
    void clear();

    /// Populates grads of every requires_grad leaf with d(root)/d(leaf).
    /// Leaf grads accumulate across calls; intermediate grads are reset.
    void backward(const Tensor& root);

  private:
    std::vector<std::function<void()>> ops_;
    std::vector<std::shared_ptr<detail::Node>> produced_;
};

Tape* active_tape();

/// Installs a tape as the recording target for the current thread.
class TapeScope {
  public:
    explicit TapeScope(Tape& t);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

void check_finite(const Tensor& t, const char* ctx);

}  // namespace ar
