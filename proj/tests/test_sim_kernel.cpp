#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cycletrack/sim_kernel.hpp"
#include "test_util.hpp"

using namespace cycletrack;

namespace {

std::vector<float> pack(const std::vector<std::vector<float>>& vectors) {
  std::vector<float> flat;
  for (const auto& v : vectors) flat.insert(flat.end(), v.begin(), v.end());
  return flat;
}

SimilarityMatrix from_rows(const std::vector<std::vector<float>>& rows) {
  SimilarityMatrix s;
  s.rows = rows.size();
  s.cols = rows.front().size();
  for (const auto& r : rows) s.values.insert(s.values.end(), r.begin(), r.end());
  return s;
}

// Straight double-loop oracle, independent of the blocked kernel path.
double naive_dot(const std::vector<float>& a, const std::vector<float>& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * b[i];
  return sum;
}

}  // namespace

TEST_CASE("cosine matrix on hand values") {
  {
    const std::vector<float> ref = {1.0f, 0.0f};
    const std::vector<float> cur = {0.0f, 1.0f};
    const SimilarityMatrix s =
        cosine_similarity_matrix({ref.data(), 1, 2}, {cur.data(), 1, 2});
    REQUIRE(s.rows == 1);
    REQUIRE(s.cols == 1);
    CHECK(s.at(0, 0) == 0.0f);
  }
  {
    const std::vector<float> ref = {1.0f, 0.0f, 0.0f, 1.0f};
    const std::vector<float> cur = {1.0f, 0.0f};
    const SimilarityMatrix s =
        cosine_similarity_matrix({ref.data(), 2, 2}, {cur.data(), 1, 2});
    CHECK(s.at(0, 0) == 1.0f);
    CHECK(s.at(1, 0) == 0.0f);
  }
}

TEST_CASE("cosine matrix equals the naive elementwise oracle") {
  std::mt19937 rng(3);
  std::vector<std::vector<float>> ref, cur;
  for (int i = 0; i < 4; ++i) ref.push_back(testutil::random_unit(3, rng));
  for (int i = 0; i < 5; ++i) cur.push_back(testutil::random_unit(3, rng));
  const std::vector<float> ref_flat = pack(ref), cur_flat = pack(cur);
  const SimilarityMatrix s =
      cosine_similarity_matrix({ref_flat.data(), 4, 3}, {cur_flat.data(), 5, 3});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(std::abs(s.at(i, j) - naive_dot(ref[i], cur[j])) < 1e-6);
    }
  }
}

TEST_CASE("dim mismatch is rejected") {
  const std::vector<float> a = {1.0f, 0.0f};
  const std::vector<float> b = {1.0f, 0.0f, 0.0f};
  CHECK_THROWS_AS(cosine_similarity_matrix({a.data(), 1, 2}, {b.data(), 1, 3}), Error);
}

TEST_CASE("transpose symmetry is bitwise") {
  std::mt19937 rng(5);
  for (int iteration = 0; iteration < 10; ++iteration) {
    const int n = 1 + static_cast<int>(rng() % 12);
    const int m = 1 + static_cast<int>(rng() % 12);
    const int d = 1 + static_cast<int>(rng() % 33);
    std::vector<std::vector<float>> a, b;
    for (int i = 0; i < n; ++i) a.push_back(testutil::random_unit(d, rng));
    for (int i = 0; i < m; ++i) b.push_back(testutil::random_unit(d, rng));
    const std::vector<float> fa = pack(a), fb = pack(b);
    const SimilarityMatrix ab = cosine_similarity_matrix(
        {fa.data(), static_cast<std::size_t>(n), d}, {fb.data(), static_cast<std::size_t>(m), d});
    const SimilarityMatrix ba = cosine_similarity_matrix(
        {fb.data(), static_cast<std::size_t>(m), d}, {fa.data(), static_cast<std::size_t>(n), d});
    REQUIRE(transpose(ba).values == ab.values);
  }
}

TEST_CASE("worker count never changes the bits") {
  std::mt19937 rng(9);
  std::vector<std::vector<float>> a, b;
  const int d = 67;  // odd on purpose: exercises the scalar tail
  for (int i = 0; i < 70; ++i) a.push_back(testutil::random_unit(d, rng));
  for (int i = 0; i < 90; ++i) b.push_back(testutil::random_unit(d, rng));
  const std::vector<float> fa = pack(a), fb = pack(b);
  const VectorSetView va{fa.data(), 70, d};
  const VectorSetView vb{fb.data(), 90, d};
  const SimilarityMatrix s1 = cosine_similarity_matrix(va, vb, 1);
  const SimilarityMatrix s2 = cosine_similarity_matrix(va, vb, 2);
  const SimilarityMatrix s8 = cosine_similarity_matrix(va, vb, 8);
  REQUIRE(s1.values == s2.values);
  REQUIRE(s1.values == s8.values);
}

TEST_CASE("argmax on hand matrices") {
  CHECK(row_argmax(from_rows({{0.9f, 0.1f}, {0.2f, 0.8f}})) ==
        std::vector<std::size_t>{0, 1});
  CHECK(row_argmax(from_rows({{0.5f, 0.5f}})) == std::vector<std::size_t>{0});

  const SimilarityMatrix s =
      from_rows({{.1f, .2f, .9f}, {.8f, .3f, .1f}, {.2f, .7f, .3f}});
  CHECK(row_argmax(s) == std::vector<std::size_t>{2, 0, 1});
  CHECK(col_argmax(s) == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("row_argmax(S) == col_argmax(transpose(S))") {
  std::mt19937 rng(13);
  std::uniform_real_distribution<float> value(-1.0f, 1.0f);
  for (int iteration = 0; iteration < 20; ++iteration) {
    SimilarityMatrix s;
    s.rows = 1 + rng() % 10;
    s.cols = 1 + rng() % 10;
    s.values.resize(s.rows * s.cols);
    for (auto& v : s.values) v = value(rng);
    CHECK(row_argmax(s) == col_argmax(transpose(s)));
    CHECK(col_argmax(s) == row_argmax(transpose(s)));
  }
}

TEST_CASE("argmax rejects empty matrices") {
  SimilarityMatrix empty;
  CHECK_THROWS_AS(row_argmax(empty), Error);
  CHECK_THROWS_AS(col_argmax(empty), Error);
}

TEST_CASE("pairwise euclidean distances") {
  {
    const std::vector<GridPoint> pts = {{0, 0}, {3, 4}};
    const std::vector<double> d = pairwise_euclidean(pts);
    CHECK(d == std::vector<double>{0.0, 5.0, 5.0, 0.0});
  }
  {
    const std::vector<GridPoint> pts = {{7, 7}};
    CHECK(pairwise_euclidean(pts) == std::vector<double>{0.0});
  }
  {
    std::mt19937 rng(17);
    std::vector<GridPoint> pts;
    for (int i = 0; i < 4; ++i) {
      pts.push_back({static_cast<int>(rng() % 20), static_cast<int>(rng() % 20)});
    }
    const std::vector<double> d = pairwise_euclidean(pts);
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t b = 0; b < 4; ++b) {
        const double dr = pts[a].row - pts[b].row;
        const double dc = pts[a].col - pts[b].col;
        CHECK(d[a * 4 + b] == std::sqrt(dr * dr + dc * dc));
        CHECK(d[a * 4 + b] == d[b * 4 + a]);
      }
    }
  }
}

TEST_CASE("top_k_min") {
  {
    const std::vector<double> scores = {3.0, 1.0, 2.0};
    CHECK(top_k_min(scores, 1) == std::vector<std::size_t>{1});
  }
  {
    const std::vector<double> scores = {1.0, 1.0};
    CHECK(top_k_min(scores, 1) == std::vector<std::size_t>{0});
  }
  {
    const std::vector<double> scores = {5.0, 2.0};
    CHECK(top_k_min(scores, 10) == std::vector<std::size_t>{1, 0});
  }
  {
    std::mt19937 rng(23);
    std::uniform_real_distribution<double> value(0.0, 1.0);
    std::vector<double> scores(20);
    for (auto& s : scores) s = value(rng);

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    order.resize(5);
    CHECK(top_k_min(scores, 5) == order);
  }
}
