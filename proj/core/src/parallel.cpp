#include "protopaws/parallel.hpp"

#include <atomic>

namespace protopaws {

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int n) { g_threads.store(n < 1 ? 1 : n); }

int num_threads() { return g_threads.load(); }

} // namespace protopaws
