#include <gtest/gtest.h>

#include <sstream>

#include "spdcov/config.hpp"

using namespace spdcov;

namespace {

const std::set<std::string> kKeys{"archive", "method", "seeds", "lr", "epochs", "layers"};

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return RunConfig::parse(in, kKeys, "run.cfg");
}

}  // namespace

TEST(RunConfig, ParsesValuesCommentsAndQuotes) {
  const auto c = parse(
      "# training run\n"
      "archive = \"out/desc # not a comment\"\n"
      "method=spdnet   # trailing\n"
      "\n"
      "seeds = [0, 1, 2]\n"
      "lr = 1e-2\n"
      "epochs = 40\n");
  EXPECT_EQ(c.get_string("archive"), "out/desc # not a comment");
  EXPECT_EQ(c.get_string("method"), "spdnet");
  EXPECT_EQ(c.get_int_list("seeds"), (std::vector<long>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(c.get_double("lr"), 0.01);
  EXPECT_EQ(c.get_int("epochs"), 40);
  EXPECT_FALSE(c.has("layers"));
  EXPECT_EQ(c.values().size(), 5u);
}

TEST(RunConfig, UnbracketedList) { EXPECT_EQ(parse("seeds = 3,4\n").get_int_list("seeds"), (std::vector<long>{3, 4})); }

TEST(RunConfig, Errors) {
  EXPECT_THROW(parse("colour = red\n"), UsageError);
  EXPECT_THROW(parse("lr = 1\nlr = 2\n"), UsageError);
  EXPECT_THROW(parse("just words\n"), UsageError);
  EXPECT_THROW(parse("= 3\n"), UsageError);
  EXPECT_THROW(parse("lr = fast\n").get_double("lr"), UsageError);
  EXPECT_THROW(parse("epochs = 4.5\n").get_int("epochs"), UsageError);
  EXPECT_THROW(parse("seeds = [1, 2\n").get_int_list("seeds"), UsageError);
  EXPECT_THROW(RunConfig::load("/nonexistent/run.cfg", kKeys), UsageError);
  try {
    parse("lr = 1\ncolour = red\n");
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
}

TEST(ParseDims, Forms) {
  EXPECT_EQ(parse_dims("16,8,4"), (std::vector<int>{16, 8, 4}));
  EXPECT_EQ(parse_dims("16x8"), (std::vector<int>{16, 8}));
  EXPECT_EQ(parse_dims("[32, 16]"), (std::vector<int>{32, 16}));
  EXPECT_THROW(parse_dims("16,eight"), UsageError);
  EXPECT_TRUE(parse_dims("").empty());
}
