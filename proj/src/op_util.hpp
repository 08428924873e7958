#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "luxforge/tensor.hpp"

namespace luxforge::detail {

template <typename S>
inline void require_rank(const BasicTensor<S>& t, int rank, const char* op,
                         const char* arg) {
  if (t.rank() != rank)
    throw shape_error(cat(op, ": ", arg, " must be rank-", rank, ", got shape ",
                          shape_str(t.shape())));
}

// Registers the backward closure when gradients are live. Must be called
// after the output values are final.
template <typename S>
inline void record_op(Context<S>& ctx, const char* name,
                      std::initializer_list<BasicTensor<S>*> inputs,
                      BasicTensor<S>& out, std::function<void()> backward) {
  if (!ctx.grad_enabled()) return;
  bool need = false;
  for (auto* t : inputs) need = need || t->needs_grad();
  if (!need) return;
  out.storage()->needs_grad = true;
  ctx.tape->record(name, std::vector<BasicTensor<S>*>(inputs), out,
                   std::move(backward));
}

template <typename S>
inline void debug_finite(const BasicTensor<S>& t, const char* op) {
#ifndef NDEBUG
  if (!all_finite(t))
    throw value_error(cat(op, ": non-finite values in output buffer"));
#else
  (void)t;
  (void)op;
#endif
}

}  // namespace luxforge::detail
