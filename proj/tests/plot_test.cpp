#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "charlab/error.hpp"
#include "charlab/evalx.hpp"
#include "charlab/plot.hpp"
#include "test_util.hpp"

namespace charlab {
namespace {

size_t count_of(const std::string& text, const std::string& needle) {
  size_t n = 0;
  for (size_t at = text.find(needle); at != std::string::npos; at = text.find(needle, at + 1)) ++n;
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs whose character curves cross the threshold at 10 * sqrt(|V| K).
nlohmann::ordered_json sqrt_report() {
  std::vector<RunData> runs;
  for (int vs : {256, 1024, 4096}) {
    RunData r;
    r.run_id = "v" + std::to_string(vs);
    r.vocab_size = vs;
    r.k = 4;
    r.char_enabled = true;
    r.insertion = "every_layer";
    const int at = static_cast<int>(10 * std::sqrt(vs * 4.0));
    for (int step = 0; step <= 2000; step += 10) {
      r.metrics.push_back({r.run_id, step, "mean_word", -1, step >= at ? 0.4 : 0.0, 8, std::nullopt});
      r.metrics.push_back({r.run_id, step, "mean_char", -1, step >= at ? 0.2 : 0.0, 8, std::nullopt});
    }
    runs.push_back(r);
  }
  return analyze(runs);
}

TEST(Plot, OnePolylinePerSeries) {
  const std::vector<Series> two{{"a", {{0, 0}, {1, 1}}}, {"b", {{0, 1}, {1, 0}, {2, 0.5}}}};
  const auto svg = svg_chart({"t", "x", "y", "", false, false}, two);
  EXPECT_EQ(count_of(svg, "<polyline"), 2u);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  const std::vector<Series> positive{{"a", {{1, 0}, {10, 1}}}, {"b", {{1, 1}, {100, 0}}}};
  const auto logx = svg_chart({"t", "x", "y", "cap & <note>", true, true}, positive);
  EXPECT_NE(logx.find("cap &amp; &lt;note&gt;"), std::string::npos);
}

TEST(Plot, WritesChartsAndMatchingCsv) {
  testing::TempDir dir("plot");
  const auto report = sqrt_report();
  const auto written = write_plots(report, dir.path());
  EXPECT_EQ(written.size(), 6u);

  const auto acc_svg = slurp(dir / "accuracy.svg");
  EXPECT_EQ(count_of(acc_svg, "<polyline"), report.at("curves").size());
  size_t points = 0;
  for (const auto& c : report.at("curves")) points += c.at("points").size();
  const auto acc_csv = slurp(dir / "accuracy.csv");
  EXPECT_EQ(static_cast<size_t>(std::count(acc_csv.begin(), acc_csv.end(), '\n')), points + 1);

  const auto em_csv = slurp(dir / "emergence.csv");
  EXPECT_EQ(std::count(em_csv.begin(), em_csv.end(), '\n'), 4);

  const auto collapse_svg = slurp(dir / "collapse.svg");
  const std::regex caption("raw CV=([0-9.e+-]+) scaled CV=([0-9.e+-]+)");
  std::smatch m;
  ASSERT_TRUE(std::regex_search(collapse_svg, m, caption));
  EXPECT_LT(std::stod(m[2].str()), std::stod(m[1].str()));
}

TEST(Plot, EmptyReportIsAnError) {
  testing::TempDir dir("plot_empty");
  nlohmann::ordered_json report = {{"curves", nlohmann::ordered_json::array()}};
  try {
    write_plots(report, dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyInput);
  }
}

}  // namespace
}  // namespace charlab
