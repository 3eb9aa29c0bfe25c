#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <optional>
#include <vector>

#include "cycletrack/evalkit.hpp"
#include "cycletrack/pipeline.hpp"
#include "cycletrack/tracker.hpp"
#include "test_util.hpp"

using namespace cycletrack;

namespace {

std::vector<EmbeddingGrid> grids_of(const std::vector<SynthFrame>& frames) {
  std::vector<EmbeddingGrid> grids;
  for (const auto& f : frames) grids.push_back(f.grid);
  return grids;
}

std::vector<LabelMask> labels_of(const std::vector<SynthFrame>& frames) {
  std::vector<LabelMask> labels;
  for (const auto& f : frames) labels.push_back(f.labels);
  return labels;
}

const Tracklet* find_tracklet(const SequenceResult& result, std::uint16_t id) {
  for (const Tracklet& t : result.tracklets) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

TrackerConfig quiet_config() {
  TrackerConfig config;
  config.workers = 1;
  return config;
}

}  // namespace

TEST_CASE("a static sequence is a fixed point") {
  SynthSpec spec;
  spec.height = 12;
  spec.width = 12;
  spec.dim = 16;
  spec.frames = 6;
  spec.seed = 5;
  spec.noise_sigma = 0.0;
  ObjectSpec a;
  a.label = 1;
  a.top = 1;
  a.left = 1;
  a.height = 3;
  a.width = 3;
  ObjectSpec b = a;
  b.label = 2;
  b.top = 7;
  b.left = 7;
  spec.objects = {a, b};

  const auto frames = generate(spec);
  const SequenceResult result = run_frames(grids_of(frames), std::nullopt, quiet_config());

  REQUIRE(result.labels.size() == 6);
  for (std::size_t t = 1; t < result.labels.size(); ++t) {
    REQUIRE(result.labels[t] == result.labels[0]);
  }
  // detection found both objects (plus the background region as an object)
  const EvalReport report = evaluate(result.labels, labels_of(frames));
  CHECK(report.per_object_iou.at(1) == 1.0);
  CHECK(report.per_object_iou.at(2) == 1.0);
  CHECK(report.id_switch_count == 0);
}

TEST_CASE("translating blobs keep exact masks and identities") {
  SynthSpec spec;
  spec.height = 20;
  spec.width = 14;
  spec.dim = 12;
  spec.frames = 12;
  spec.seed = 9;
  spec.noise_sigma = 0.05;
  ObjectSpec a;
  a.label = 1;
  a.top = 1;
  a.left = 2;
  a.height = 3;
  a.width = 3;
  a.vel_row = 1.0;
  ObjectSpec b = a;
  b.label = 2;
  b.left = 9;
  spec.objects = {a, b};

  const auto frames = generate(spec);
  const SequenceResult result = run_frames(grids_of(frames), std::nullopt, quiet_config());
  const std::vector<LabelMask> gt = labels_of(frames);
  const EvalReport report = evaluate(result.labels, gt);

  CHECK(report.id_switch_count == 0);
  const TrackMap pred_tracks = tracks_from_labels(result.labels);
  const TrackMap gt_tracks = tracks_from_labels(gt);
  for (const auto& [gt_id, masks] : gt_tracks) {
    const int pred_id = report.matched_pred.at(gt_id);
    REQUIRE(pred_id >= 0);
    const auto& pred_masks = pred_tracks.at(static_cast<std::uint16_t>(pred_id));
    for (std::size_t t = 0; t < masks.size(); ++t) {
      CHECK(mask_iou(pred_masks[t], masks[t]) >= 0.9f);
    }
  }
}

TEST_CASE("semi-supervised start adopts the given objects verbatim") {
  SynthSpec spec;
  spec.height = 10;
  spec.width = 10;
  spec.dim = 16;
  spec.frames = 3;
  spec.seed = 21;
  spec.noise_sigma = 0.02;
  ObjectSpec a;
  a.label = 4;  // ids need not be contiguous
  a.top = 2;
  a.left = 2;
  a.height = 3;
  a.width = 3;
  ObjectSpec b = a;
  b.label = 9;
  b.top = 6;
  b.left = 6;
  b.height = 2;
  b.width = 2;
  spec.objects = {a, b};

  const auto frames = generate(spec);
  const SequenceResult result =
      run_frames(grids_of(frames), frames[0].labels, quiet_config());

  REQUIRE(result.tracklets.size() == 2);
  CHECK(result.tracklets[0].id == 4);
  CHECK(result.tracklets[1].id == 9);
  CHECK(result.labels[0] == frames[0].labels);
  for (std::size_t t = 1; t < result.labels.size(); ++t) {
    CHECK(result.labels[t] == frames[t].labels);  // clean field tracks exactly
  }
}

TEST_CASE("a vanished object dies after exactly out_limit consecutive misses") {
  SynthSpec spec;
  spec.height = 12;
  spec.width = 12;
  spec.dim = 16;
  spec.frames = 10;
  spec.seed = 33;
  spec.noise_sigma = 0.02;
  ObjectSpec a;
  a.label = 1;
  a.top = 2;
  a.left = 2;
  a.height = 3;
  a.width = 3;
  a.visible_until = 4;  // last visible frame is 3
  ObjectSpec b = a;
  b.label = 2;
  b.top = 8;
  b.left = 8;
  b.visible_until = std::numeric_limits<int>::max();
  spec.objects = {a, b};

  TrackerConfig config = quiet_config();
  config.out_limit = 3;

  const auto frames = generate(spec);
  const SequenceResult result = run_frames(grids_of(frames), frames[0].labels, config);

  const Tracklet* lost = find_tracklet(result, 1);
  REQUIRE(lost != nullptr);
  CHECK_FALSE(lost->alive);
  CHECK(lost->death_frame == 6);  // misses at 4, 5, 6
  CHECK_FALSE(lost->masks.contains(4));
  CHECK(lost->masks.contains(3));

  const Tracklet* kept = find_tracklet(result, 2);
  REQUIRE(kept != nullptr);
  CHECK(kept->alive);
  CHECK(kept->out_counter == 0);

  // a dead tracklet never reappears in later label maps
  for (std::size_t t = 7; t < result.labels.size(); ++t) {
    for (std::uint16_t id : result.labels[t].object_ids()) CHECK(id != 1);
  }
}

TEST_CASE("re-detection admits a newly appearing object and keeps ids fresh") {
  SynthSpec spec;
  spec.height = 14;
  spec.width = 14;
  spec.dim = 16;
  spec.frames = 12;
  spec.seed = 55;
  spec.noise_sigma = 0.02;
  ObjectSpec a;
  a.label = 1;
  a.top = 1;
  a.left = 1;
  a.height = 3;
  a.width = 3;
  ObjectSpec late = a;
  late.label = 2;
  late.top = 9;
  late.left = 9;
  late.visible_from = 4;
  spec.objects = {a, late};

  TrackerConfig config = quiet_config();
  config.redetect_interval = 3;

  const auto frames = generate(spec);
  const SequenceResult result = run_frames(grids_of(frames), std::nullopt, config);

  // the newcomer is visible from frame 4, so the frame-6 sweep admits it
  std::uint16_t new_id = 0;
  for (const Tracklet& t : result.tracklets) {
    if (t.birth_frame == 6) {
      new_id = t.id;
      break;
    }
  }
  REQUIRE(new_id != 0);

  const TrackMap pred = tracks_from_labels(result.labels);
  const TrackMap gt = tracks_from_labels(labels_of(frames));
  for (std::size_t t = 6; t < 12; ++t) {
    CHECK(mask_iou(pred.at(new_id)[t], gt.at(2)[t]) >= 0.9f);
  }

  // ids are never reused: every id is distinct and newcomers extend the range
  std::vector<std::uint16_t> ids;
  for (const Tracklet& t : result.tracklets) ids.push_back(t.id);
  std::sort(ids.begin(), ids.end());
  CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
}

TEST_CASE("object-in admission boundary is strictly below the threshold") {
  CHECK(object_in_admits(0.0f, 0.5f));
  CHECK(object_in_admits(0.499f, 0.5f));
  CHECK_FALSE(object_in_admits(0.5f, 0.5f));  // exactly at threshold: not new
  CHECK_FALSE(object_in_admits(1.0f, 0.5f));
}

TEST_CASE("an identical proposal never becomes a duplicate tracklet") {
  SynthSpec spec;
  spec.height = 10;
  spec.width = 10;
  spec.dim = 16;
  spec.frames = 8;
  spec.seed = 77;
  spec.noise_sigma = 0.0;
  ObjectSpec a;
  a.label = 1;
  a.top = 3;
  a.left = 3;
  a.height = 3;
  a.width = 3;
  spec.objects = {a};

  TrackerConfig config = quiet_config();
  config.redetect_interval = 2;  // sweep often

  const auto frames = generate(spec);
  const SequenceResult result = run_frames(grids_of(frames), std::nullopt, config);
  // one object + one background region, and nothing ever duplicates
  CHECK(result.tracklets.size() == 2);
}

TEST_CASE("deterministic replay") {
  SynthSpec spec;
  spec.height = 12;
  spec.width = 12;
  spec.dim = 12;
  spec.frames = 8;
  spec.seed = 91;
  spec.noise_sigma = 0.05;
  ObjectSpec a;
  a.label = 1;
  a.top = 2;
  a.left = 2;
  a.height = 3;
  a.width = 3;
  a.vel_col = 0.5;
  spec.objects = {a};

  const auto frames = generate(spec);
  const SequenceResult first = run_frames(grids_of(frames), std::nullopt, quiet_config());
  TrackerConfig threaded = quiet_config();
  threaded.workers = 2;  // worker count must not change anything
  const SequenceResult second = run_frames(grids_of(frames), std::nullopt, threaded);

  REQUIRE(first.labels.size() == second.labels.size());
  for (std::size_t t = 0; t < first.labels.size(); ++t) {
    REQUIRE(first.labels[t] == second.labels[t]);
  }
}

TEST_CASE("memory grows to capacity and then stays there") {
  SynthSpec spec;
  spec.height = 8;
  spec.width = 8;
  spec.dim = 12;
  spec.frames = 10;
  spec.seed = 101;
  spec.noise_sigma = 0.0;
  ObjectSpec a;
  a.label = 1;
  a.top = 2;
  a.left = 2;
  a.height = 3;
  a.width = 3;
  spec.objects = {a};

  TrackerConfig config = quiet_config();
  config.redetect_interval = 1000;  // disabled for this trace
  config.memory_capacity = 60;      // background region fills it quickly

  const auto frames = generate(spec);
  TrackerSession session(frames[0].grid, frames[0].labels, config);
  std::size_t previous = session.memory()->size();
  bool saturated = false;
  for (std::size_t t = 1; t < frames.size(); ++t) {
    session.step(frames[t].grid);
    const std::size_t size = session.memory()->size();
    if (!saturated) {
      CHECK(size >= previous);
    } else {
      CHECK(size == config.memory_capacity);
    }
    if (size == config.memory_capacity) saturated = true;
    previous = size;
  }
  CHECK(session.memory()->size() <= config.memory_capacity);
}

TEST_CASE("an all-noise first frame yields an empty, flagged session") {
  std::mt19937 rng(7);
  const EmbeddingGrid noise = testutil::make_grid(10, 10, 32, [&](int, int) {
    return testutil::random_unit(32, rng);
  });
  TrackerSession session(noise, quiet_config());
  CHECK(session.no_objects_detected());
  CHECK(session.tracklets().empty());

  const EmbeddingGrid more = testutil::make_grid(10, 10, 32, [&](int, int) {
    return testutil::random_unit(32, rng);
  });
  const LabelMask& label = session.step(more);
  CHECK(label.object_ids().empty());
}

TEST_CASE("a single-frame sequence is detection only") {
  SynthSpec spec;
  spec.height = 10;
  spec.width = 10;
  spec.dim = 16;
  spec.frames = 1;
  spec.seed = 3;
  ObjectSpec a;
  a.label = 1;
  a.top = 3;
  a.left = 3;
  a.height = 4;
  a.width = 4;
  spec.objects = {a};

  const auto frames = generate(spec);
  const SequenceResult result = run_frames(grids_of(frames), std::nullopt, quiet_config());
  REQUIRE(result.labels.size() == 1);
  CHECK_FALSE(result.no_objects_detected);
  bool found = false;
  for (const Tracklet& t : result.tracklets) {
    if (t.masks.contains(0) && t.masks.at(0) == object_mask(frames[0].labels, 1)) found = true;
  }
  CHECK(found);
}

TEST_CASE("run_manifest replays a written sequence deterministically") {
  namespace fs = std::filesystem;
  SynthSpec spec;
  spec.height = 10;
  spec.width = 10;
  spec.dim = 12;
  spec.frames = 5;
  spec.seed = 13;
  spec.noise_sigma = 0.03;
  spec.name = "replay";
  ObjectSpec a;
  a.label = 1;
  a.top = 3;
  a.left = 3;
  a.height = 3;
  a.width = 3;
  spec.objects = {a};

  const fs::path dir = fs::temp_directory_path() / "cycletrack_run_manifest";
  fs::remove_all(dir);
  const std::string manifest = write_sequence(generate(spec), dir.string(), 10.0, spec.name);

  const ManifestRun first = run_manifest(manifest, quiet_config(), false, true);
  const ManifestRun second = run_manifest(manifest, quiet_config());
  CHECK(first.manifest.name == "replay");
  REQUIRE(first.result.labels.size() == 5);
  for (std::size_t t = 0; t < 5; ++t) {
    REQUIRE(first.result.labels[t] == second.result.labels[t]);
  }
  REQUIRE(first.bank_dump.has_value());
  CHECK_FALSE(second.bank_dump.has_value());
  CHECK((*first.bank_dump)["size"].get<std::size_t>() > 0);

  write_run_outputs(first, (dir / "out").string());
  CHECK(fs::exists(dir / "out" / "frame_0004.lmk"));
  CHECK(fs::exists(dir / "out" / "result.json"));
  CHECK(fs::exists(dir / "out" / "bank.json"));

  // semi-supervised needs the first-frame mask: strip it and expect failure
  SequenceManifest broken = first.manifest;
  broken.frames[0].mask = std::nullopt;
  const std::string broken_path = (dir / "broken.json").string();
  write_manifest(broken, broken_path);
  CHECK_THROWS_AS(run_manifest(broken_path, quiet_config(), true), Error);
}

TEST_CASE("config validation") {
  TrackerConfig config;
  config.k_points = 0;
  CHECK_THROWS_AS(validate_config(config), Error);
  config.k_points = 6;
  CHECK_THROWS_AS(validate_config(config), Error);
  config = TrackerConfig{};
  config.new_object_iou = 1.0f;
  CHECK_THROWS_AS(validate_config(config), Error);
  config = TrackerConfig{};
  CHECK_NOTHROW(validate_config(config));
}
