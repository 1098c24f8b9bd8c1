#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "rsedit/eval.hpp"
#include "support.hpp"

using namespace rsedit;
using Catch::Approx;

TEST_CASE("clip score endpoints", "[eval]") {
  const std::vector<double> e{0.48, 0.64, 0.6};
  const std::vector<double> neg{-0.48, -0.64, -0.6};
  const std::vector<double> orth{0.8, -0.6, 0.0};
  CHECK(clip_score_from_embeddings(e, e) == 1.0);
  CHECK(clip_score_from_embeddings(e, neg) == 0.0);
  CHECK(clip_score_from_embeddings(e, orth) == 0.0);
  CHECK(clip_score_from_embeddings(e, e, 2.5) == 2.5);
}

TEST_CASE("score from a known cosine", "[eval]") {
  // Scores are fractions; a cosine of 0.2138 displays as 21.38%.
  const double c = 0.2138;
  const std::vector<double> a{1.0, 0.0};
  const std::vector<double> b{c, std::sqrt(1.0 - c * c)};
  const double score = clip_score_from_embeddings(a, b);
  CHECK(score == Approx(0.2138).margin(1e-12));
  CHECK(std::round(score * 10000.0) / 100.0 == 21.38);
}

TEST_CASE("clip score properties", "[eval]") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(6), b(6);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    const double s = clip_score_from_embeddings(a, b);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    std::vector<double> scaled = a;
    for (double& v : scaled) v *= 3.7;
    CHECK(clip_score_from_embeddings(scaled, b) == Approx(s).margin(1e-12));
    const double cos = cosine_similarity(a, b);
    CHECK(s == Approx(std::max(cos, 0.0)).margin(1e-15));
  }
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(clip_score_from_embeddings(zero, std::vector<double>{1.0, 0.0}), InvalidInput);
}

TEST_CASE("image scores through an embedder", "[eval]") {
  const MockEmbedder embedder;
  const auto img = test::pattern_image({16, 16}).cast<double>();
  const double s = clip_score(img, "a forest", embedder);
  const double manual = std::max(
      0.0, cosine_similarity(embedder.embed_image(img).values(), embedder.embed_text("a forest").values()));
  CHECK(s == manual);
  CHECK(clip_score(img, "a forest", embedder, 0.5) == Approx(0.5 * s));
  const auto remote = make_embedder("remoteclip");
  CHECK_THROWS_AS(clip_score(img, "a forest", *remote), Unavailable);
}

TEST_CASE("score report round trip", "[eval]") {
  ScoreReport report;
  report.embedder_id = "mock-32";
  report.records = {{"a.png", "a forest", 0.25}, {"dir/b c.png", "a \"quoted\" prompt", 0.123456789012345}};
  CHECK(report.mean() == Approx((0.25 + 0.123456789012345) / 2));
  std::stringstream buffer;
  write_score_report(report, buffer);
  const std::string text = buffer.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  const auto back = read_score_report(buffer);
  CHECK(back.embedder_id == "mock-32");
  REQUIRE(back.records.size() == 2);
  CHECK(back.records[1].path == "dir/b c.png");
  CHECK(back.records[1].prompt == "a \"quoted\" prompt");
  CHECK(back.records[1].score == 0.123456789012345);
  CHECK(ScoreReport{}.mean() == 0.0);

  std::istringstream bad("{\"path\": \"x.png\"}\n");
  CHECK_THROWS_AS(read_score_report(bad), ParseError);
  std::istringstream garbage("not json\n");
  CHECK_THROWS_AS(read_score_report(garbage), ParseError);
}
