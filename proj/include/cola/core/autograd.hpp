#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation of one forward pass; calling
// backward() on a scalar result walks the records in reverse and
// accumulates gradients into the inputs and bound parameters.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>

#include "cola/core/errors.hpp"

namespace cola {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Named parameters in deterministic (lexicographic) order. References to
// entries stay valid while the store is alive.
template <class T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Mat<T> value) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw InvalidArgument("duplicate parameter '" + name + "'");
    it->second.name = name;
    it->second.value = std::move(value);
    it->second.zero_grad();
    return it->second;
  }

  Parameter<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
    return it->second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  void erase(const std::string& name) { params_.erase(name); }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

  void set_trainable(bool trainable) {
    for (auto& [_, p] : params_) p.trainable = trainable;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  // FNV-1a over the raw parameter bytes; used to assert frozenness bitwise.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, p] : params_) {
      for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
      for (std::size_t i = 0; i < static_cast<std::size_t>(p.value.size()) * sizeof(T); ++i)
        h = (h ^ bytes[i]) * 1099511628211ULL;
    }
    return h;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Parameter<T>> params_;
};

template <class T>
struct Node {
  Mat<T> value;
  Mat<T> grad;
  bool requires_grad = false;
  std::function<void(const Mat<T>&)> backward;

  void ensure_grad() {
    if (grad.size() == 0) grad.setZero(value.rows(), value.cols());
  }
  template <class Expr>
  void accumulate(const Expr& g) {
    ensure_grad();
    grad.noalias() += g;
  }
};

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, Node<T>* node) : tape_(tape), node_(node) {}

  const Mat<T>& value() const { return node_->value; }
  const Mat<T>& grad() const { return node_->grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  T scalar() const { return node_->value(0, 0); }

  Node<T>* node() const { return node_; }
  Tape<T>* tape() const { return tape_; }
  bool valid() const { return node_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  Node<T>* node_ = nullptr;
};

template <class T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Mat<T> value) {
    auto& n = nodes_.emplace_back();
    n.value = std::move(value);
    return {this, &n};
  }

  // Leaf that collects its own gradient (read it from Var::grad()).
  Var<T> leaf(Mat<T> value) {
    auto& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.requires_grad = grad_enabled_;
    return {this, &n};
  }

  // Binds a parameter. Gradients are added into Parameter::grad on backward.
  // Frozen parameters (trainable == false) behave as constants.
  Var<T> param(Parameter<T>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return {this, it->second};
    auto& n = nodes_.emplace_back();
    n.value = p.value;
    n.requires_grad = grad_enabled_ && p.trainable;
    if (n.requires_grad) {
      Parameter<T>* target = &p;
      n.backward = [target](const Mat<T>& g) {
        if (target->grad.size() == 0) target->zero_grad();
        target->grad += g;
      };
    }
    bound_.emplace(&p, &n);
    return {this, &n};
  }

  // Records an operation. `backward` receives the gradient of the output and
  // is only stored when some input requires a gradient.
  template <class Backward>
  Var<T> record(Mat<T> value, std::initializer_list<Var<T>> inputs, Backward&& backward) {
    auto& n = nodes_.emplace_back();
    n.value = std::move(value);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    n.requires_grad = grad_enabled_ && any;
    if (n.requires_grad) n.backward = std::forward<Backward>(backward);
    return {this, &n};
  }

  void backward(const Var<T>& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward() needs a scalar loss");
    if (!loss.requires_grad()) return;
    Node<T>* root = loss.node();
    root->grad = Mat<T>::Ones(1, 1);
    bool started = false;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (&*it == root) started = true;
      if (!started) continue;
      if (!it->requires_grad || !it->backward || it->grad.size() == 0) continue;
      it->backward(it->grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  bool grad_enabled_;
  std::deque<Node<T>> nodes_;
  std::unordered_map<const Parameter<T>*, Node<T>*> bound_;
};

}  // namespace cola
