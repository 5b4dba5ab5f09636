#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "coworld/rng.hpp"
#include "coworld/tensor.hpp"

namespace coworld {

// A trainable array plus its gradient and Adam moments. Tapes accumulate
// into grad; the optimizer (nets.hpp) consumes and clears it.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;

  Param() = default;
  Param(std::string n, int rows, int cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols), m(rows, cols), v(rows, cols) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

struct TRef {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense 2-D tensors. Ops evaluate eagerly; backward()
// sweeps the recorded ops in reverse and accumulates leaf gradients into
// their Params. A tape may be swept multiple times (grads inside the tape
// are re-zeroed each sweep; Param.grad accumulates across sweeps).
class Tape {
 public:
  // ---- leaves ----
  TRef constant(Tensor t);
  TRef zeros(int rows, int cols) { return constant(Tensor(rows, cols)); }
  // Registers p as a trainable leaf (deduplicated per tape). Inside a
  // FrozenScope the value is recorded as a plain constant instead.
  TRef param(Param& p);

  // ---- arithmetic ----
  TRef add(TRef a, TRef b);
  TRef sub(TRef a, TRef b);
  TRef mul(TRef a, TRef b);
  TRef scale(TRef x, double c);
  TRef add_scalar(TRef x, double c);
  TRef matmul(TRef a, TRef b);
  TRef add_rowvec(TRef x, TRef bias);  // bias [1,n] broadcast over rows
  TRef mul_colvec(TRef x, TRef w);     // w [m,1] broadcast over cols

  // ---- shape ----
  TRef concat_cols(TRef a, TRef b);
  TRef slice_cols(TRef x, int c0, int c1);
  TRef stack_rows(const std::vector<TRef>& xs);
  TRef slice_rows(TRef x, int r0, int r1);
  TRef repeat_rows(TRef x, int times);

  // ---- nonlinearities ----
  TRef tanh_(TRef x);
  TRef sigmoid_(TRef x);
  TRef elu_(TRef x);
  TRef softplus_(TRef x);
  TRef log_(TRef x);
  TRef exp_(TRef x);
  TRef square_(TRef x);

  // ---- distributions ----
  TRef softmax_g(TRef x, int group);
  TRef log_softmax_g(TRef x, int group);
  // Straight-through categorical sample: forward emits one-hot rows per
  // group, backward passes gradients to the probabilities unchanged.
  TRef onehot_sample_st(TRef probs, int group, Rng& rng);
  TRef onehot_mode(TRef probs, int group);  // argmax; no gradient

  // ---- selection ----
  // max(a, b) elementwise; at exact ties the gradient goes to a.
  TRef maximum(TRef a, TRef b);
  // max(x, c); gradient passes only where x > c (clamped states get zero).
  TRef clamp_min(TRef x, double c);
  TRef stop_grad(TRef x);
  // row r of the result is a's row where take_a[r], else b's
  TRef where_rows(const std::vector<uint8_t>& take_a, TRef a, TRef b);

  // ---- reductions ----
  TRef row_sum(TRef x);   // [m,n] -> [m,1]
  TRef sum_all(TRef x);   // -> [1,1]
  TRef mean_all(TRef x);  // -> [1,1]

  const Tensor& value(TRef r) const { return nodes_[r.id].val; }
  double scalar(TRef r) const { return nodes_[r.id].val.data[0]; }
  // gradient of the last backward() at this node (empty if untouched)
  const std::vector<double>& grad_at(TRef r) const { return nodes_[r.id].grad; }

  void backward(TRef loss);
  size_t node_count() const { return nodes_.size(); }

  // While alive, param() records constants: values participate in the
  // forward math and pass gradients through, but no leaf is registered.
  class FrozenScope {
   public:
    explicit FrozenScope(Tape& t) : tape_(t) { ++tape_.frozen_depth_; }
    ~FrozenScope() { --tape_.frozen_depth_; }
    FrozenScope(const FrozenScope&) = delete;
    FrozenScope& operator=(const FrozenScope&) = delete;

   private:
    Tape& tape_;
  };

 private:
  struct Node {
    Tensor val;
    std::vector<double> grad;  // sized lazily during backward
    bool grad_live = false;
    Param* leaf = nullptr;
    std::function<void(Tape&, int)> back;  // empty for leaves / no-grad ops
  };

  int push(Tensor val) {
    nodes_.push_back(Node{std::move(val), {}, false, nullptr, {}});
    return static_cast<int>(nodes_.size()) - 1;
  }
  // gradient buffer of node id, allocated+zeroed on first touch per sweep
  double* gbuf(int id);
  bool live(int id) const { return nodes_[id].grad_live; }

  std::vector<Node> nodes_;
  std::unordered_map<Param*, int> param_ids_;
  std::unordered_map<Param*, int> frozen_ids_;  // dedup of frozen-param constants
  int frozen_depth_ = 0;

  friend class FrozenScope;
};

}  // namespace coworld
