#include <gtest/gtest.h>

#include <set>

#include "iris/grad_suite.hpp"

using namespace iris;

TEST(GradSuite, CoversEveryLayer) {
  std::set<std::string> prefixes;
  for (const auto& c : gradient_cases()) prefixes.insert(c.name.substr(0, c.name.find('.')));
  EXPECT_EQ(prefixes, (std::set<std::string>{"tensor", "detect", "recognize"}));
}

TEST(GradSuite, AllCasesPassOverTwentySeeds) {
  const auto results = run_gradient_suite(20);
  ASSERT_EQ(results.size(), gradient_cases().size());
  for (const auto& r : results)
    EXPECT_TRUE(r.passed) << r.name << " max rel " << r.max_rel_error << " (" << r.worst_entry << "), skipped "
                          << r.entries_skipped << "/" << r.entries_checked + r.entries_skipped;
}

TEST(GradSuite, FilterSelectsByName) {
  const auto results = run_gradient_suite(1, 1e-3, 1e-3, "recognize.");
  ASSERT_EQ(results.size(), 2u);
  EXPECT_EQ(results[0].name, "recognize.stacked_pool");
}
