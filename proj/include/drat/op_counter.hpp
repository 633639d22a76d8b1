// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace drat {

/// Work tally for attention kernels. One dot product is one query-key pair,
/// regardless of head count; mac_ops counts the scalar multiply-accumulates of
/// both the score and the value-mixing stages.
struct OpCounter {
  std::uint64_t dot_products = 0;
  std::uint64_t mac_ops = 0;

  void reset() { *this = OpCounter{}; }
};

/// Routes attention tallies on this thread into `counter` while alive.
class CountingScope {
 public:
  explicit CountingScope(OpCounter& counter);
  ~CountingScope();
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  OpCounter* previous_;
};

/// Counter installed on this thread, or nullptr.
OpCounter* active_counter();

}  // namespace drat
