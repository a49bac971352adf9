#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "transukan/tensor.hpp"

namespace tukan {

/// Ordered record of executed differentiable operations.
///
/// Operations append entries while a tape is active on the current thread
/// (see TapeScope). Entries are appended in execution order, so the record is
/// already topologically sorted and backward() just walks it in reverse.
/// With no active tape, ops run in inference mode and record nothing.
class Tape {
 public:
  /// Receives the gradient of the entry's output; accumulates into inputs.
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Tensor output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse order.
  /// Throws ContractError for a non-scalar loss or an empty tape, and
  /// StateError when called a second time before reset().
  void backward(Tensor loss);

  /// Drops all entries (and the intermediates they keep alive).
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  /// Tape that ops on this thread record into, or nullptr.
  static Tape* active();

 private:
  friend class TapeScope;
  struct Entry {
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// Makes `tape` the active tape for the current thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording on the current thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// True when an op over `inputs` must be recorded: a tape is active and at
/// least one input requires a gradient.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(std::span<const Tensor> inputs);

/// Records `output` on the active tape and marks it as requiring a gradient.
void record_op(Tensor& output, Tape::BackwardFn fn);

}  // namespace tukan
