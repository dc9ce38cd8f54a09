#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ctcnat {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles.
//
// A Tensor is a shared handle: copies alias the same storage, which is what
// lets a GradTape refer to intermediate values after the caller has dropped
// them. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  // True for tensors that were not produced by a recorded operation.
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  Tensor clone() const;
  // Same values, no gradient tracking.
  Tensor detach() const;

  const void* id() const noexcept { return impl_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    bool leaf = true;
    std::vector<double> grad;
  };

  std::shared_ptr<Storage> impl_;

  friend class GradTape;
};

// Ordered record of differentiable operations.
//
// Operations record onto the tape installed on the current thread by a
// TapeScope, and only when at least one input requires a gradient.
// backward() replays the records in reverse order. Gradients live in the
// tape rather than in the tensors, so several threads can differentiate
// through shared parameters at once, each with its own tape.
class GradTape {
 public:
  using BackwardFn = std::function<void(GradTape&)>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Marks output as produced by an operation over inputs. The backward rule
  // reads gradient(output) and adds into grad_buffer(input) for each input
  // that requires a gradient.
  void record(std::vector<Tensor> inputs, Tensor& output, BackwardFn backward);

  // Seeds d(loss)/d(loss) = seed (loss must hold one element) and runs every
  // recorded backward rule in reverse order.
  void backward(const Tensor& loss, double seed = 1.0);

  // Zero-initialised accumulation buffer for t.
  std::span<double> grad_buffer(const Tensor& t);
  // Accumulated gradient for t; empty span when nothing reached it.
  std::span<const double> gradient(const Tensor& t) const;

  // Adds the tape gradients of every requires_grad leaf into Tensor::grad.
  void accumulate_into_leaves();

  std::size_t num_records() const { return records_.size(); }
  void clear();

  static GradTape* current() noexcept;

 private:
  struct Record {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  std::vector<Record> records_;
  std::unordered_map<const void*, std::vector<double>> grads_;
  std::unordered_map<const void*, Tensor> leaves_;

  friend class TapeScope;
};

// Installs a tape as the current thread's recording target.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

// Suspends recording for the lifetime of the guard (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  GradTape* previous_;
};

}  // namespace ctcnat
