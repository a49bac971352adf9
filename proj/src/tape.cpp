#include "transukan/tape.hpp"

#include "transukan/error.hpp"

namespace tukan {

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

Tape* Tape::active() { return g_active_tape; }

void Tape::record(Tensor output, BackwardFn fn) {
  if (consumed_) throw StateError("cannot record onto a tape that has run backward; call reset() first");
  entries_.push_back(Entry{std::move(output), std::move(fn)});
}

void Tape::backward(Tensor loss) {
  if (consumed_) throw StateError("backward() called twice without reset()");
  if (loss.numel() != 1) throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (entries_.empty()) throw ContractError("backward() on an empty tape");
  if (!loss.requires_grad()) throw ContractError("loss does not depend on any tensor that requires grad");
  consumed_ = true;
  loss.grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    // Entries whose output never received a gradient do not contribute.
    if (!it->output.has_grad()) continue;
    it->fn(it->output.grad());
  }
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool should_record(std::span<const Tensor> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

void record_op(Tensor& output, Tape::BackwardFn fn) {
  output.set_requires_grad(true);
  g_active_tape->record(output, std::move(fn));
}

}  // namespace tukan
