#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cswin/errors.hpp"

namespace cswin {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "f32 or f64 only");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

template <class T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  bool leaf = true;
};

template <class T>
class Tape;

/// Shared handle to a dense row-major buffer. Copies alias the same storage,
/// use clone() for an independent copy.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Storage = TensorStorage<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : s_(std::make_shared<Storage>()) {
    s_->data.assign(cswin::numel(shape), fill);
    s_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<Storage>()) {
    if (values.size() != cswin::numel(shape)) {
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values do not fill shape " + cswin::to_string(shape));
    }
    s_->shape = std::move(shape);
    s_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  std::vector<T>& vec() { return s_->data; }
  const std::vector<T>& vec() const { return s_->data; }

  T& operator[](std::size_t i) { return s_->data[i]; }
  const T& operator[](std::size_t i) const { return s_->data[i]; }

  T& at(std::initializer_list<std::size_t> idx) { return s_->data[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return s_->data[offset(idx)]; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + cswin::to_string(shape()));
    return s_->data[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    s_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return s_->leaf; }

  bool has_grad() const { return s_ && !s_->grad.empty(); }
  std::span<const T> grad() const { return s_->grad; }
  /// Gradient buffer, allocated (zeroed) on first access.
  std::span<T> mutable_grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
    return s_->grad;
  }
  void zero_grad() { s_->grad.clear(); }

  Tensor clone() const {
    Tensor out(shape());
    out.s_->data = s_->data;
    return out;
  }

  Storage* storage() const { return s_.get(); }
  bool same_storage(const Tensor& o) const { return s_ == o.s_; }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != rank()) throw DimensionError("at(): index rank mismatch");
    std::size_t off = 0, k = 0;
    for (std::size_t i : idx) {
      if (i >= s_->shape[k]) throw DimensionError("at(): index out of range");
      off = off * s_->shape[k++] + i;
    }
    return off;
  }

  std::shared_ptr<Storage> s_;
  friend class Tape<T>;
};

/// Define-by-run record of differentiable ops. Ops append to the tape that is
/// active on the current thread; backward() replays the record in reverse.
template <class T>
class Tape {
 public:
  struct Entry {
    const char* op;
    Tensor<T> output;
    std::vector<Tensor<T>> inputs;
    std::function<void()> backward;
  };

  class Scope {
   public:
    explicit Scope(Tape* tape) : prev_(active_) { active_ = tape; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] Scope record() { return Scope(this); }
  static Tape* active() { return active_; }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  void push(Entry e) {
    if (consumed_) throw ContractError("tape already replayed; call reset() before recording");
    entries_.push_back(std::move(e));
  }

  void reset() {
    entries_.clear();
    consumed_ = false;
  }

  void backward(Tensor<T> loss) {
    if (consumed_) throw ContractError("backward() called twice on the same tape without reset()");
    if (!loss.defined() || loss.numel() != 1 || loss.rank() > 1) {
      throw ContractError("backward() needs a scalar loss");
    }
    if (!std::isfinite(static_cast<double>(loss.item()))) {
      throw NumericError("non-finite loss; first non-finite output produced by op '" +
                         first_nonfinite_op() + "'");
    }
    consumed_ = true;
    if (!loss.requires_grad()) return;
    loss.mutable_grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->backward();
      for (auto& in : it->inputs) {
        if (!in.has_grad()) continue;
        for (T g : in.grad()) {
          if (!std::isfinite(static_cast<double>(g))) {
            throw NumericError(std::string("non-finite gradient produced by backward of op '") +
                               it->op + "'");
          }
        }
      }
    }
  }

 private:
  std::string first_nonfinite_op() const {
    for (const auto& e : entries_) {
      for (T v : e.output.data()) {
        if (!std::isfinite(static_cast<double>(v))) return e.op;
      }
    }
    return "<input>";
  }

  std::vector<Entry> entries_;
  bool consumed_ = false;
  static inline thread_local Tape* active_ = nullptr;
};

template <class T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
  tape.backward(loss);
}

namespace detail {

/// Records `out` as the result of `op` when a tape is active and some input
/// is tracked. `fn` is invoked during backward with out's grad populated.
template <class T, class Fn>
void record(const char* op, Tensor<T>& out, std::vector<Tensor<T>> inputs, Fn&& fn) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return;
  bool tracked = false;
  for (const auto& in : inputs) tracked = tracked || (in.defined() && in.requires_grad());
  if (!tracked) return;
  out.set_requires_grad(true);
  out.storage()->leaf = false;
  tape->push({op, out, std::move(inputs), std::forward<Fn>(fn)});
}

}  // namespace detail

}  // namespace cswin
