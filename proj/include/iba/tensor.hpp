#pragma once

#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace iba {

// Dense tensors are rank <= 4 with N,C,H,W convention for rank-4 data.
using Shape = std::vector<int>;

inline long long numel(const Shape& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline void check_shape(const Shape& s) {
    if (s.empty() || s.size() > 4)
        throw std::invalid_argument("tensor rank must be 1..4, got " + shape_str(s));
    for (int d : s)
        if (d < 1) throw std::invalid_argument("tensor dims must be >= 1, got " + shape_str(s));
}

namespace detail {

// One recorded node of the computation graph. `parents` precede the node in
// recording order, so walking nodes parents-first is a topological order.
template <class Real>
struct TapeNode {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // allocated when requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<TapeNode>> parents;
    // Pulls this->grad and accumulates into parents' grad buffers.
    std::function<void(TapeNode&)> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    }
};

}  // namespace detail

template <class Real>
class TensorT {
  public:
    using Node = detail::TapeNode<Real>;

    TensorT() = default;

    static TensorT zeros(Shape s, bool requires_grad = false) {
        return filled(std::move(s), Real(0), requires_grad);
    }

    static TensorT filled(Shape s, Real v, bool requires_grad = false) {
        check_shape(s);
        auto n = std::make_shared<Node>();
        n->value.assign(static_cast<size_t>(numel(s)), v);
        n->shape = std::move(s);
        n->requires_grad = requires_grad;
        if (requires_grad) n->ensure_grad();
        return TensorT(std::move(n));
    }

    static TensorT from_data(Shape s, std::vector<Real> data, bool requires_grad = false) {
        check_shape(s);
        if (static_cast<long long>(data.size()) != numel(s))
            throw std::invalid_argument("data size " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(s));
        auto n = std::make_shared<Node>();
        n->shape = std::move(s);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        if (requires_grad) n->ensure_grad();
        return TensorT(std::move(n));
    }

    static TensorT scalar(Real v, bool requires_grad = false) {
        return filled({1}, v, requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int size() const { return static_cast<int>(n_->value.size()); }

    Real* data() { return n_->value.data(); }
    const Real* data() const { return n_->value.data(); }
    std::vector<Real>& vec() { return n_->value; }
    const std::vector<Real>& vec() const { return n_->value; }

    Real item() const {
        if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }

    // Only meaningful on leaves; interior nodes get their flag from parents.
    void set_requires_grad(bool rg) {
        n_->requires_grad = rg;
        if (rg) n_->ensure_grad();
    }

    Real* grad() { n_->ensure_grad(); return n_->grad.data(); }
    const std::vector<Real>& grad_vec() const { return n_->grad; }
    void zero_grad() {
        if (n_->requires_grad) n_->grad.assign(n_->value.size(), Real(0));
    }

    // Copy of the values with no graph attached.
    TensorT detach(bool requires_grad = false) const {
        return from_data(n_->shape, n_->value, requires_grad);
    }

    std::shared_ptr<Node> node() const { return n_; }
    static TensorT wrap(std::shared_ptr<Node> n) { return TensorT(std::move(n)); }

  private:
    explicit TensorT(std::shared_ptr<Node> n) : n_(std::move(n)) {}
    std::shared_ptr<Node> n_;
};

using Tensor = TensorT<float>;

namespace detail {

// Builds an op result node. The backprop callback is attached only when some
// parent needs gradients, so pure inference records no backward closures.
template <class Real>
TensorT<Real> make_result(Shape shape, std::vector<Real> value,
                          std::vector<std::shared_ptr<TapeNode<Real>>> parents,
                          std::function<void(TapeNode<Real>&)> backprop) {
    auto n = std::make_shared<TapeNode<Real>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->ensure_grad();
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return TensorT<Real>::wrap(std::move(n));
}

}  // namespace detail

// Linearization of the graph below a root, parents before children.
template <class Real>
struct Tape {
    std::vector<std::shared_ptr<detail::TapeNode<Real>>> order;

    static Tape linearize(const TensorT<Real>& root) {
        Tape t;
        std::unordered_set<const void*> seen;
        // iterative post-order DFS
        struct Frame { detail::TapeNode<Real>* node; size_t next; std::shared_ptr<detail::TapeNode<Real>> ref; };
        std::vector<Frame> stack;
        if (!root.node()->requires_grad) return t;
        stack.push_back({root.node().get(), 0, root.node()});
        seen.insert(root.node().get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.node->parents.size()) {
                auto& p = f.node->parents[f.next++];
                if (p->requires_grad && !seen.count(p.get())) {
                    seen.insert(p.get());
                    stack.push_back({p.get(), 0, p});
                }
            } else {
                t.order.push_back(f.ref);
                stack.pop_back();
            }
        }
        return t;
    }
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable requires_grad node; leaves keep theirs until zero_grad().
template <class Real>
void backward(const TensorT<Real>& loss) {
    if (loss.size() != 1)
        throw std::invalid_argument("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;
    auto tape = Tape<Real>::linearize(loss);
    loss.node()->grad[0] += Real(1);
    for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
        auto& node = **it;
        if (node.backprop) node.backprop(node);
    }
}

}  // namespace iba
