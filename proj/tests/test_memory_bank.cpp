#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <vector>

#include "cycletrack/memory_bank.hpp"
#include "test_util.hpp"

using namespace cycletrack;

namespace {

EmbeddingGrid axis_grid(int height, int width, int dim) {
  // every patch gets a distinct axis direction so entries are identifiable
  return testutil::make_grid(height, width, dim, [&](int row, int col) {
    return testutil::unit_axis(dim, (row * width + col) % dim);
  });
}

BinaryMask full_mask(int height, int width) {
  BinaryMask m(height, width);
  std::fill(m.cells.begin(), m.cells.end(), std::uint8_t{1});
  return m;
}

}  // namespace

TEST_CASE("init stores one entry per non-background patch") {
  const EmbeddingGrid grid = axis_grid(4, 4, 16);
  LabelMask labels(4, 4);
  labels.set(0, 0, 1);
  labels.set(0, 1, 1);
  labels.set(2, 3, 1);

  const MemoryBank bank(grid, labels, 100);
  REQUIRE(bank.size() == 3);
  for (const MemoryEntry& e : bank.entries()) {
    CHECK(e.object_id == 1);
    CHECK(e.frame_of_origin == 0);
    CHECK(e.utilization == 0);
  }
}

TEST_CASE("all-background init yields an empty bank") {
  const EmbeddingGrid grid = axis_grid(2, 2, 4);
  const MemoryBank bank(grid, LabelMask(2, 2), 10);
  CHECK(bank.size() == 0);
  CHECK_THROWS_AS(bank.reference_view(), Error);
}

TEST_CASE("capacity below the first frame is rejected") {
  const EmbeddingGrid grid = axis_grid(2, 2, 4);
  LabelMask labels(2, 2);
  labels.set(0, 0, 1);
  labels.set(0, 1, 1);
  labels.set(1, 0, 1);
  try {
    MemoryBank bank(grid, labels, 2);
    FAIL("expected capacity error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::capacity_too_small);
  }
}

TEST_CASE("utilization counts pair occurrences") {
  const EmbeddingGrid grid = axis_grid(2, 2, 4);
  LabelMask labels(2, 2);
  labels.set(0, 0, 1);
  labels.set(0, 1, 1);
  MemoryBank bank(grid, labels, 10);

  const std::vector<std::size_t> used = {0, 0};
  bank.record_utilization(used);
  CHECK(bank.entries()[0].utilization == 2);
  CHECK(bank.entries()[1].utilization == 0);

  bank.record_utilization({});
  CHECK(bank.entries()[0].utilization == 2);

  const std::vector<std::size_t> bad = {5};
  CHECK_THROWS_AS(bank.record_utilization(bad), Error);

  // random trace vs a naive tally
  std::mt19937 rng(7);
  std::vector<std::uint64_t> tally = {2, 0};
  for (int frame = 0; frame < 5; ++frame) {
    std::vector<std::size_t> indices;
    for (int i = 0; i < 6; ++i) indices.push_back(rng() % 2);
    for (std::size_t i : indices) ++tally[i];
    bank.record_utilization(indices);
  }
  CHECK(bank.entries()[0].utilization == tally[0]);
  CHECK(bank.entries()[1].utilization == tally[1]);
}

TEST_CASE("insert_frame keeps only points inside their object's mask") {
  const EmbeddingGrid grid = axis_grid(2, 2, 8);
  LabelMask labels(2, 2);
  labels.set(0, 0, 1);
  MemoryBank bank(grid, labels, 10);

  BinaryMask predicted(2, 2);
  predicted.set(1, 1);
  std::map<std::uint16_t, BinaryMask> masks = {{1, predicted}};

  std::map<std::uint16_t, std::vector<CyclePair>> inside = {{1, {{0, 3, 0.9f}}}};
  CHECK(bank.insert_frame(1, grid, inside, masks) == 1);
  CHECK(bank.size() == 2);
  CHECK(bank.entries()[1].frame_of_origin == 1);
  CHECK(bank.latest_frame() == 1);

  std::map<std::uint16_t, std::vector<CyclePair>> outside = {{1, {{0, 0, 0.9f}}}};
  CHECK(bank.insert_frame(2, grid, outside, masks) == 0);
  CHECK(bank.size() == 2);

  // duplicate endpoints collapse to one entry
  std::map<std::uint16_t, std::vector<CyclePair>> duplicated = {
      {1, {{0, 3, 0.9f}, {1, 3, 0.8f}}}};
  CHECK(bank.insert_frame(3, grid, duplicated, masks) == 1);

  CHECK_THROWS_AS(bank.insert_frame(3, grid, inside, masks), Error);  // not after latest
}

TEST_CASE("eviction during insertion follows the utilization policy") {
  // capacity 5, three initial entries plus two mid entries with utilization
  // 4 and 1; inserting one more evicts the utilization-1 entry
  const EmbeddingGrid grid = axis_grid(2, 2, 8);
  LabelMask labels(2, 2);
  labels.set(0, 0, 1);
  labels.set(0, 1, 1);
  labels.set(1, 0, 1);
  MemoryBank bank(grid, labels, 5);

  const BinaryMask everywhere = full_mask(2, 2);
  std::map<std::uint16_t, BinaryMask> masks = {{1, everywhere}};
  std::map<std::uint16_t, std::vector<CyclePair>> two = {{1, {{0, 1, 0.9f}, {1, 2, 0.9f}}}};
  REQUIRE(bank.insert_frame(1, grid, two, masks) == 2);
  REQUIRE(bank.size() == 5);

  // entries 3 and 4 are the mid entries; give them utilizations 4 and 1
  bank.record_utilization(std::vector<std::size_t>{3, 3, 3, 3, 4});

  std::map<std::uint16_t, std::vector<CyclePair>> one = {{1, {{0, 3, 0.9f}}}};
  REQUIRE(bank.insert_frame(2, grid, one, masks) == 1);
  REQUIRE(bank.size() == 5);

  int initial_count = 0;
  bool kept_high_utilization = false;
  bool kept_new = false;
  for (const MemoryEntry& e : bank.entries()) {
    if (e.frame_of_origin == 0) ++initial_count;
    if (e.frame_of_origin == 1) {
      CHECK(e.utilization == 4);
      kept_high_utilization = true;
    }
    if (e.frame_of_origin == 2) kept_new = true;
  }
  CHECK(initial_count == 3);
  CHECK(kept_high_utilization);
  CHECK(kept_new);
}

TEST_CASE("insertion overflow when initial plus candidates exceed capacity") {
  const EmbeddingGrid grid = axis_grid(2, 2, 8);
  LabelMask labels(2, 2);
  labels.set(0, 0, 1);
  labels.set(0, 1, 1);
  labels.set(1, 0, 1);
  MemoryBank bank(grid, labels, 4);

  std::map<std::uint16_t, BinaryMask> masks = {{1, full_mask(2, 2)}};
  std::map<std::uint16_t, std::vector<CyclePair>> two = {{1, {{0, 1, 0.9f}, {1, 2, 0.9f}}}};
  try {
    bank.insert_frame(1, grid, two, masks);
    FAIL("expected overflow");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::insertion_overflow);
  }
}

TEST_CASE("standalone evict protects initial and latest frames") {
  const EmbeddingGrid grid = axis_grid(2, 3, 8);
  LabelMask labels(2, 3);
  labels.set(0, 0, 1);
  MemoryBank bank(grid, labels, 20);

  std::map<std::uint16_t, BinaryMask> masks = {{1, full_mask(2, 3)}};
  std::map<std::uint16_t, std::vector<CyclePair>> frame1 = {
      {1, {{0, 1, .9f}, {0, 2, .8f}, {0, 3, .7f}}}};
  bank.insert_frame(1, grid, frame1, masks);
  std::map<std::uint16_t, std::vector<CyclePair>> frame2 = {{1, {{0, 4, .9f}, {0, 5, .8f}}}};
  bank.insert_frame(2, grid, frame2, masks);
  REQUIRE(bank.size() == 6);

  // utilizations [3, 0, 2] on the frame-1 entries (indices 1..3)
  bank.record_utilization(std::vector<std::size_t>{1, 1, 1, 3, 3});
  const auto removed = bank.evict(1);
  REQUIRE(removed.size() == 1);
  CHECK(removed[0].utilization == 0);
  CHECK(removed[0].frame_of_origin == 1);
  CHECK(bank.size() == 5);

  // only frame-1 entries remain evictable (frame 2 is latest, frame 0 initial)
  try {
    bank.evict(3);
    FAIL("expected nothing evictable");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::nothing_evictable);
  }
}

TEST_CASE("utilization ties evict the older frame first") {
  const EmbeddingGrid grid = axis_grid(2, 3, 8);
  LabelMask labels(2, 3);
  labels.set(0, 0, 1);
  MemoryBank bank(grid, labels, 20);

  std::map<std::uint16_t, BinaryMask> masks = {{1, full_mask(2, 3)}};
  std::map<std::uint16_t, std::vector<CyclePair>> frame1 = {{1, {{0, 1, .9f}}}};
  bank.insert_frame(1, grid, frame1, masks);
  std::map<std::uint16_t, std::vector<CyclePair>> frame2 = {{1, {{0, 2, .9f}}}};
  bank.insert_frame(2, grid, frame2, masks);
  std::map<std::uint16_t, std::vector<CyclePair>> frame3 = {{1, {{0, 3, .9f}}}};
  bank.insert_frame(3, grid, frame3, masks);

  const auto removed = bank.evict(1);  // frames 1 and 2 tie at utilization 0
  REQUIRE(removed.size() == 1);
  CHECK(removed[0].frame_of_origin == 1);
}

TEST_CASE("reference view order and size") {
  const EmbeddingGrid grid = axis_grid(2, 2, 8);
  LabelMask labels(2, 2);
  labels.set(0, 1, 3);
  labels.set(1, 0, 5);
  MemoryBank bank(grid, labels, 10);

  ReferenceSet view = bank.reference_view();
  REQUIRE(view.count() == 2);
  // row-major frame-0 order: patch (0,1) then (1,0)
  CHECK(view.labels[0] == 3);
  CHECK(view.labels[1] == 5);
  CHECK(std::equal(view.view().vec(0).begin(), view.view().vec(0).end(), grid.patch(1).begin()));
  CHECK(std::equal(view.view().vec(1).begin(), view.view().vec(1).end(), grid.patch(2).begin()));

  std::map<std::uint16_t, BinaryMask> masks = {{3, full_mask(2, 2)}};
  std::map<std::uint16_t, std::vector<CyclePair>> pairs = {{3, {{0, 0, .9f}}}};
  bank.insert_frame(1, grid, pairs, masks);
  view = bank.reference_view();
  CHECK(view.count() == bank.size());
  CHECK(view.labels.back() == 3);  // insertion order
}

TEST_CASE("seed_object admits a mask directly and respects capacity") {
  const EmbeddingGrid grid = axis_grid(2, 2, 8);
  LabelMask labels(2, 2);
  labels.set(0, 0, 1);
  MemoryBank bank(grid, labels, 10);

  BinaryMask mask(2, 2);
  mask.set(1, 0);
  mask.set(1, 1);
  CHECK(bank.seed_object(2, grid, mask, 7) == 2);
  CHECK(bank.size() == 3);
  CHECK(bank.latest_frame() == 2);
  CHECK(bank.entries()[1].object_id == 7);

  // same-frame seeding right after an insert is allowed
  CHECK(bank.seed_object(2, grid, mask, 8) == 2);
  CHECK_THROWS_AS(bank.seed_object(1, grid, mask, 9), Error);
}

TEST_CASE("random operation traces keep every invariant") {
  std::mt19937 rng(1234);
  const EmbeddingGrid grid = axis_grid(3, 3, 8);
  LabelMask labels(3, 3);
  labels.set(0, 0, 1);
  labels.set(0, 1, 2);
  MemoryBank bank(grid, labels, 12);
  const std::size_t initial_size = bank.size();

  // mirror model: (utilization, frame, insertion counter) per live entry
  struct Shadow {
    std::uint64_t utilization;
    int frame;
    std::uint64_t counter;
  };
  std::vector<Shadow> shadow;
  std::uint64_t counter = 0;
  for (std::size_t i = 0; i < initial_size; ++i) shadow.push_back({0, 0, counter++});
  int frame = 0;

  for (int step = 0; step < 2000; ++step) {
    const int op = static_cast<int>(rng() % 3);
    if (op == 0 && bank.size() > 0) {
      std::vector<std::size_t> used;
      for (int i = 0; i < 3; ++i) used.push_back(rng() % bank.size());
      bank.record_utilization(used);
      for (std::size_t i : used) ++shadow[i].utilization;
    } else if (op == 1) {
      ++frame;
      const std::size_t count = rng() % 4;
      std::map<std::uint16_t, std::vector<CyclePair>> pairs;
      for (std::size_t i = 0; i < count; ++i) {
        pairs[1].push_back({0, rng() % 9, 0.5f});
      }
      std::map<std::uint16_t, BinaryMask> masks = {{1, full_mask(3, 3)}};
      const std::size_t before = bank.size();
      std::size_t inserted = 0;
      try {
        inserted = bank.insert_frame(frame, grid, pairs, masks);
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::insertion_overflow);
        continue;
      }
      std::size_t need = before + inserted > 12 ? before + inserted - 12 : 0;
      if (need > 0) {
        std::vector<std::size_t> order;
        for (std::size_t i = 0; i < shadow.size(); ++i) {
          if (shadow[i].frame != 0) order.push_back(i);
        }
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
          if (shadow[a].utilization != shadow[b].utilization)
            return shadow[a].utilization < shadow[b].utilization;
          if (shadow[a].frame != shadow[b].frame) return shadow[a].frame < shadow[b].frame;
          return shadow[a].counter < shadow[b].counter;
        });
        order.resize(need);
        std::sort(order.begin(), order.end());
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
          shadow.erase(shadow.begin() + static_cast<std::ptrdiff_t>(*it));
        }
      }
      for (std::size_t i = 0; i < inserted; ++i) shadow.push_back({0, frame, counter++});
    } else if (bank.size() > initial_size) {
      std::vector<std::size_t> evictable;
      for (std::size_t i = 0; i < shadow.size(); ++i) {
        if (shadow[i].frame != 0 && shadow[i].frame != frame) evictable.push_back(i);
      }
      if (evictable.empty()) continue;
      std::sort(evictable.begin(), evictable.end(), [&](std::size_t a, std::size_t b) {
        if (shadow[a].utilization != shadow[b].utilization)
          return shadow[a].utilization < shadow[b].utilization;
        if (shadow[a].frame != shadow[b].frame) return shadow[a].frame < shadow[b].frame;
        return shadow[a].counter < shadow[b].counter;
      });
      const auto removed = bank.evict(1);
      REQUIRE(removed.size() == 1);
      CHECK(removed[0].utilization == shadow[evictable[0]].utilization);
      CHECK(removed[0].frame_of_origin == shadow[evictable[0]].frame);
      shadow.erase(shadow.begin() + static_cast<std::ptrdiff_t>(evictable[0]));
    }

    // invariants after every public operation
    REQUIRE(bank.size() <= bank.capacity());
    REQUIRE(bank.size() == shadow.size());
    std::size_t initial_alive = 0;
    for (std::size_t i = 0; i < bank.size(); ++i) {
      CHECK(bank.entries()[i].utilization == shadow[i].utilization);
      CHECK(bank.entries()[i].frame_of_origin == shadow[i].frame);
      if (bank.entries()[i].frame_of_origin == 0) ++initial_alive;
    }
    REQUIRE(initial_alive == initial_size);
  }
}
