#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "attnsched/depgraph.hpp"

using namespace attnsched;

namespace {

std::string golden(const std::string& name) {
  std::ifstream in(std::string(ATTNSCHED_GOLDEN_DIR) + "/" + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Golden, Head2x3FullTiles) {
  const LayerGraph g = build_attention_head(2, 3);
  const std::string expected = golden("head_2x3_full.txt");
  ASSERT_FALSE(expected.empty());
  EXPECT_EQ(dump_node_graph(fine_grained_graph(g, uniform_split(g, 0))), expected);
}
