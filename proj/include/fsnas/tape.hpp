#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <vector>

#include "fsnas/error.hpp"
#include "fsnas/tensor.hpp"

namespace fsnas {

// Reverse-mode tape. Ops push entries in execution order; backward replays
// them in reverse, which visits every node after all of its consumers.
//
// Adjoints of intermediates live in scratch buffers keyed by a replay epoch;
// leaves with requires_grad accumulate into their persistent grad, so
// repeated backward calls add up (accumulated-gradient semantics).
template <typename S>
class Tape {
 public:
  struct Entry {
    std::shared_ptr<TensorData<S>> out;
    std::function<void(Tape&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }
  static bool recording() { return active() != nullptr; }

  void record(const Tensor<S>& out, std::function<void(Tape&)> backward) {
    out.impl()->on_tape = true;
    entries_.push_back(Entry{out.handle(), std::move(backward)});
  }

  std::size_t size() const { return entries_.size(); }

  // Whether t needs an adjoint at all: either a leaf that accumulates grad
  // or an intermediate produced on some tape.
  static bool wants_adjoint(const TensorData<S>* t) {
    return t->requires_grad || t->on_tape;
  }

  const std::vector<S>& adjoint_of(const TensorData<S>* t) const {
    static const std::vector<S> empty;
    if (t->adj_epoch != epoch_) return empty;
    return t->adj;
  }

  bool has_adjoint(const TensorData<S>* t) const {
    return t->adj_epoch == epoch_ && !t->adj.empty();
  }

  // Add delta into the adjoint of `t` (or its persistent grad when leaf).
  void accumulate(const std::shared_ptr<TensorData<S>>& t,
                  const std::vector<S>& delta) {
    accumulate_raw(t, delta.data(), delta.size());
  }

  void accumulate_raw(const std::shared_ptr<TensorData<S>>& t, const S* delta,
                      std::size_t n) {
    check(n == t->values.size(), ErrorCode::Dimension,
          "adjoint size mismatch in backward");
    if (t->requires_grad) {
      if (t->grad.empty()) t->grad.assign(t->values.size(), S(0));
      for (std::size_t i = 0; i < n; ++i) t->grad[i] += delta[i];
      if (t->touch_epoch != epoch_) {
        t->touch_epoch = epoch_;
        touched_.push_back(t);
      }
    }
    if (t->on_tape) {
      scratch(t.get());
      for (std::size_t i = 0; i < n; ++i) t->adj[i] += delta[i];
    }
  }

  // Direct access to the adjoint buffer of an intermediate (zeros it first
  // time in this epoch). For ops that write adjoints in place.
  std::vector<S>& scratch(TensorData<S>* t) {
    if (t->adj_epoch != epoch_) {
      t->adj.assign(t->values.size(), S(0));
      t->adj_epoch = epoch_;
    }
    return t->adj;
  }

  // Replays the tape for `loss`, seeding its adjoint with 1. Accumulates
  // into leaf grads; calling twice doubles them.
  void backward(const Tensor<S>& loss) {
    check(loss.numel() == 1, ErrorCode::Usage,
          "backward requires a scalar loss, got shape " +
              shape_str(loss.shape()));
    check(loss.impl()->on_tape, ErrorCode::Usage,
          "loss was not produced on this tape");
    // epochs are globally unique: tensors carry their marks across tapes,
    // so a fresh tape must never reuse an epoch value
    epoch_ = next_epoch();
    touched_.clear();
    scratch(loss.impl())[0] = S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      // Skip entries whose output never received an adjoint (dead branch).
      if (it->out->adj_epoch != epoch_) continue;
      it->backward(*this);
    }
  }

  // Leaves that received gradient during the most recent backward, in
  // deterministic first-touch order.
  const std::vector<std::shared_ptr<TensorData<S>>>& touched_leaves() const {
    return touched_;
  }

  void clear() {
    for (auto& e : entries_) e.out->on_tape = false;
    entries_.clear();
    touched_.clear();
  }

  ~Tape() {
    for (auto& e : entries_) e.out->on_tape = false;
  }

 private:
  static std::uint64_t next_epoch() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed) + 1;
  }

  std::vector<Entry> entries_;
  std::vector<std::shared_ptr<TensorData<S>>> touched_;
  std::uint64_t epoch_ = 0;
};

// RAII scope making a tape the active recorder for this thread.
template <typename S>
class TapeScope {
 public:
  explicit TapeScope(Tape<S>& tape) : prev_(Tape<S>::active()) {
    Tape<S>::active() = &tape;
  }
  ~TapeScope() { Tape<S>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<S>* prev_;
};

}  // namespace fsnas
