#pragma once

#include <cstddef>
#include <functional>

namespace rdns {

/// Worker cap used by parallel_for. Defaults to 1; read from RDNS_THREADS by the CLI.
void set_worker_threads(std::size_t n);
std::size_t worker_threads();

/// Reads RDNS_THREADS (positive integer) if set; leaves the current cap otherwise.
void configure_threads_from_env();

/// Runs fn(i) for i in [0, count). Callers must make each fn(i) write disjoint state and
/// perform any cross-index reduction afterwards in index order, so results do not depend
/// on the worker count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace rdns
