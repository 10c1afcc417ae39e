// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace arbigs {

/// Worker count used by parallel_for; 0 selects hardware concurrency.
void set_num_threads(unsigned count);
unsigned num_threads();

/// Runs body(i) for i in [0, count). Each index is visited exactly once;
/// callers must write only to index-owned state.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

} // namespace arbigs
