#include <gtest/gtest.h>

#include <atomic>
#include <stdexcept>
#include <vector>

#include "sen4x/parallel.hpp"

using namespace sen4x;

TEST(ParallelFor, VisitsEveryIndexOnce) {
  const int saved = num_threads();
  for (int t : {1, 3, 8}) {
    set_num_threads(t);
    std::vector<std::atomic<int>> hits(101);
    parallel_for(101, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
  set_num_threads(saved);
}

TEST(ParallelFor, RethrowsWorkerException) {
  const int saved = num_threads();
  set_num_threads(4);
  EXPECT_THROW(parallel_for(16, [](std::size_t i) {
                 if (i == 9) throw std::runtime_error("boom");
               }),
               std::runtime_error);
  set_num_threads(saved);
}
