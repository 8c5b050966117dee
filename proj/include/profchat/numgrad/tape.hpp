#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "profchat/numgrad/tensor.hpp"

namespace profchat::numgrad {

// Records the operations of one forward pass so their gradients can be
// replayed in reverse. A tape is confined to one thread and is meant to be
// created per forward pass and dropped afterwards.
//
// Outputs only participate in differentiation when at least one input
// requires a gradient; in NoGrad mode nothing is recorded at all.
class Tape {
 public:
  enum class Mode { kRecord, kNoGrad };

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }
  std::size_t size() const { return rules_.size(); }

  // [m x k] * [k x n] -> [m x n]
  Tensor matmul(const Tensor& a, const Tensor& b);
  // [m x k] * [k] -> [m]
  Tensor matvec(const Tensor& w, const Tensor& x);
  Tensor transpose(const Tensor& m);

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, double factor);
  // [n x d] + [d] broadcast over rows.
  Tensor add_rows(const Tensor& m, const Tensor& v);

  Tensor sigmoid(const Tensor& x);
  Tensor tanh(const Tensor& x);
  // Rank-1 softmax with max subtraction.
  Tensor softmax(const Tensor& x);

  // Scalar reductions (rank-0 results).
  Tensor sum(const Tensor& x);
  Tensor dot(const Tensor& a, const Tensor& b);

  // -log softmax(logits)[target]
  Tensor cross_entropy(const Tensor& logits, std::size_t target);
  // -log sigmoid(logit) for label 1, -log(1 - sigmoid(logit)) for label 0.
  Tensor sigmoid_cross_entropy(const Tensor& logit, int label);

  // Rank-0 inputs count as length-1 vectors along axis 0.
  Tensor concat(std::span<const Tensor> parts, std::size_t axis = 0);
  Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis = 0);
  Tensor slice(const Tensor& x, std::size_t begin, std::size_t length);
  // Row `index` of a matrix as a vector (embedding lookup).
  Tensor row(const Tensor& m, std::size_t index);
  // Equal-length vectors -> [n x d].
  Tensor stack(std::span<const Tensor> rows);

  // Populates grads of every reachable leaf that requires one. Leaf grads
  // accumulate across tapes until zeroed; a tape may only be replayed once.
  void backward(const Tensor& loss);

 private:
  Tensor make_output(Shape shape, std::vector<double> values,
                     std::initializer_list<const Tensor*> inputs);
  void record(std::function<void()> rule) { rules_.push_back(std::move(rule)); }

  Mode mode_;
  bool replayed_ = false;
  std::vector<std::function<void()>> rules_;
};

}  // namespace profchat::numgrad
