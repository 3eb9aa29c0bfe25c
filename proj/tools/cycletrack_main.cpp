// Command-line front end: track / synth / eval / inspect subcommands over
// the .egr/.lmk formats and JSON manifests.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cycletrack/evalkit.hpp"
#include "cycletrack/pipeline.hpp"
#include "cycletrack/run_config.hpp"
#include "cycletrack/tensor_io.hpp"
#include "cycletrack/tracker.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TrackOptions {
  std::vector<std::string> manifests;
  std::string config_path;
  std::string meta_path;
  std::string out_dir;
  bool semi_supervised = false;
  bool dump_bank = false;
  bool dump_bank_embeddings = false;
  int jobs = 1;
};

cycletrack::TrackerConfig resolve_config(const std::string& config_path, CLI::App* cmd) {
  cycletrack::TrackerConfig config;
  std::string path = config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("CYCLETRACK_CONFIG")) path = env;
  }
  if (!path.empty()) {
    config = cycletrack::tracker_config_from_json(cycletrack::load_json_file(path), path);
  }

  auto apply_int = [&](const char* flag, int& target) {
    if (cmd->count(flag)) target = static_cast<int>(cmd->get_option(flag)->as<int>());
  };
  auto apply_float = [&](const char* flag, float& target) {
    if (cmd->count(flag)) target = cmd->get_option(flag)->as<float>();
  };
  apply_int("--k-points", config.k_points);
  apply_int("--redetect-interval", config.redetect_interval);
  apply_int("--out-limit", config.out_limit);
  apply_int("--grid-side", config.grid_side);
  apply_int("--workers", config.workers);
  apply_float("--new-object-iou", config.new_object_iou);
  apply_float("--min-pair-similarity", config.min_pair_similarity);
  if (cmd->count("--memory-capacity")) {
    config.memory_capacity = cmd->get_option("--memory-capacity")->as<std::size_t>();
  }
  if (cmd->count("--disable-memory")) config.disable_memory = true;
  if (cmd->count("--disable-cycle-pairs")) config.disable_cycle_pairs = true;
  if (cmd->count("--disable-object-state")) config.disable_object_state = true;
  cycletrack::validate_config(config);
  return config;
}

void add_config_flags(CLI::App* cmd) {
  cmd->add_option("--config", "tracker config JSON (default: $CYCLETRACK_CONFIG)");
  cmd->add_option("--k-points", "prompt points per object (1..5)");
  cmd->add_option("--redetect-interval", "frames between re-detection sweeps");
  cmd->add_option("--out-limit", "consecutive out-frames before removal");
  cmd->add_option("--grid-side", "detection prompt lattice side");
  cmd->add_option("--workers", "kernel worker threads (0 = hardware)");
  cmd->add_option("--new-object-iou", "strict-below IoU for admitting proposals");
  cmd->add_option("--min-pair-similarity", "discard pairs below this similarity");
  cmd->add_option("--memory-capacity", "memory bank capacity (0 = 8x patches)");
  cmd->add_flag("--disable-memory", "ablation: previous frame is the only reference");
  cmd->add_flag("--disable-cycle-pairs", "ablation: plain row-argmax propagation");
  cmd->add_flag("--disable-object-state", "ablation: stateless per-frame segmentation");
}

int run_one_sequence(const std::string& manifest_path, const cycletrack::TrackerConfig& config,
                     bool semi_supervised, const TrackOptions& opts, std::string& log) {
  using namespace cycletrack;
  const ManifestRun run = run_manifest(manifest_path, config, semi_supervised, opts.dump_bank,
                                       opts.dump_bank_embeddings);
  const std::string name = run.manifest.name;
  write_run_outputs(run, (fs::path(opts.out_dir) / name).string());

  double total_ms = 0.0;
  char line[160];
  std::snprintf(line, sizeof(line), "[%s] %zu frames, %zu tracklets\n", name.c_str(),
                run.result.labels.size(), run.result.tracklets.size());
  log += line;
  for (const FrameStats& s : run.result.stats) {
    total_ms += s.millis;
    std::snprintf(line, sizeof(line),
                  "[%s] frame %d: %.2f ms, %zu pairs, %zu inserted, %zu alive\n", name.c_str(),
                  s.frame, s.millis, s.pairs, s.inserted, s.alive);
    log += line;
  }
  std::snprintf(line, sizeof(line), "[%s] total %.2f ms (%.2f ms/frame)\n", name.c_str(),
                total_ms, run.result.stats.empty() ? 0.0 : total_ms / run.result.stats.size());
  log += line;
  for (std::size_t i = 0; i < run.result.frame_errors.size(); ++i) {
    if (!run.result.frame_errors[i].empty()) {
      std::snprintf(line, sizeof(line), "[%s] frame %zu error: %s\n", name.c_str(), i,
                    run.result.frame_errors[i].c_str());
      log += line;
    }
  }
  return 0;
}

int cmd_track(const TrackOptions& opts, CLI::App* cmd) {
  using namespace cycletrack;
  RunMeta meta;
  if (!opts.meta_path.empty()) {
    meta = run_meta_from_json(load_json_file(opts.meta_path), opts.meta_path);
  } else {
    if (opts.manifests.empty()) {
      raise(ErrorCode::config_error, "track needs --manifest or --meta");
    }
    meta.config = resolve_config(opts.config_path, cmd);
    meta.manifests = opts.manifests;
    meta.semi_supervised = opts.semi_supervised;
  }

  fs::create_directories(opts.out_dir);
  write_json_file(run_meta_to_json(meta), (fs::path(opts.out_dir) / "run_meta.json").string());

  std::vector<std::string> logs(meta.manifests.size());
  std::vector<std::string> failures(meta.manifests.size());
  const int jobs = std::max(1, opts.jobs);
  std::mutex index_mutex;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(index_mutex);
        if (next >= meta.manifests.size()) return;
        i = next++;
      }
      try {
        run_one_sequence(meta.manifests[i], meta.config, meta.semi_supervised, opts, logs[i]);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  if (jobs == 1 || meta.manifests.size() <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min<std::size_t>(jobs, meta.manifests.size()); ++t) {
      pool.emplace_back(worker);
    }
    for (auto& th : pool) th.join();
  }

  int failed = 0;
  for (std::size_t i = 0; i < meta.manifests.size(); ++i) {
    std::cout << logs[i];
    if (!failures[i].empty()) {
      std::cerr << "error: " << meta.manifests[i] << ": " << failures[i] << "\n";
      ++failed;
    }
  }
  return failed == 0 ? 0 : 1;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  using namespace cycletrack;
  const SynthSpec spec = synth_spec_from_json(load_json_file(spec_path), spec_path);
  const std::vector<SynthFrame> frames = generate(spec);
  write_sequence(frames, out_dir, spec.fps, spec.name);
  write_json_file(synth_spec_to_json(spec), (fs::path(out_dir) / "spec.json").string());
  std::cout << "wrote " << frames.size() << " frames to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_manifest,
             const std::string& report_path, bool cycle, const std::string& config_path,
             CLI::App* cmd) {
  using namespace cycletrack;
  const LoadedSequence gt = load_sequence(gt_manifest);
  std::vector<LabelMask> gt_labels;
  for (std::size_t i = 0; i < gt.masks.size(); ++i) {
    if (!gt.masks[i]) {
      raise(ErrorCode::config_error,
            gt_manifest + ": frame " + std::to_string(i) + " has no ground-truth mask");
    }
    gt_labels.push_back(*gt.masks[i]);
  }

  std::vector<LabelMask> pred_labels;
  for (std::size_t i = 0; i < gt_labels.size(); ++i) {
    const fs::path path = fs::path(pred_dir) / frame_file_name(i);
    pred_labels.push_back(read_label_mask(path.string()));
  }

  EvalReport report = evaluate(pred_labels, gt_labels);
  if (cycle) {
    const TrackerConfig config = resolve_config(config_path, cmd);
    const CycleReport cycle_report = cycle_consistency(gt.frames, pred_labels, config);
    report.cycle_consistency_iou = cycle_report.mean_iou;
    if (!cycle_report.excluded.empty()) {
      std::cout << "cycle: " << cycle_report.excluded.size()
                << " object(s) lost before the last frame were excluded\n";
    }
  }

  const json j = eval_report_to_json(report);
  if (!report_path.empty()) write_json_file(j, report_path);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_inspect(const std::string& path) {
  using namespace cycletrack;
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".lmk") {
    const LabelMask mask = read_label_mask(path);
    std::cout << path << ": " << mask.height << "x" << mask.width << " label mask\n";
    std::map<std::uint16_t, int> counts;
    for (std::uint16_t v : mask.labels) ++counts[v];
    for (const auto& [id, count] : counts) {
      std::cout << "  id " << id << ": " << count << " patches"
                << (id == 0 ? " (background)" : "") << "\n";
    }
    return 0;
  }
  if (ext == ".egr") {
    const EmbeddingGrid grid = read_embedding_grid(path);
    std::cout << path << ": " << grid.height() << "x" << grid.width() << "x" << grid.dim()
              << " embedding grid, normalized=" << (grid.normalized() ? "yes" : "no") << "\n";
    return 0;
  }
  if (ext != ".json") {
    raise(ErrorCode::config_error, "inspect supports .json, .lmk and .egr, got " + path);
  }

  const json j = load_json_file(path);
  if (j.contains("tracklets")) {
    std::cout << path << ": tracking result, " << j.value("frames", 0) << " frames\n";
    std::printf("  %6s %6s %6s %6s %8s\n", "id", "birth", "death", "alive", "frames");
    for (const auto& t : j["tracklets"]) {
      std::printf("  %6d %6d %6d %6s %8zu\n", t.value("id", 0), t.value("birth_frame", 0),
                  t.value("death_frame", -1), t.value("alive", false) ? "yes" : "no",
                  t.value("present_frames", json::array()).size());
    }
    for (const auto& e : j.value("frame_errors", json::array())) {
      std::cout << "  frame " << e.value("frame", 0) << " error: " << e.value("error", "")
                << "\n";
    }
    return 0;
  }
  if (j.contains("entries") && j.contains("capacity")) {
    std::cout << path << ": memory bank dump, " << j.value("size", 0) << "/"
              << j.value("capacity", 0) << " entries, frames " << j.value("initial_frame", 0)
              << ".." << j.value("latest_frame", 0) << "\n";
    std::map<int, std::pair<int, std::uint64_t>> per_object;  // id -> (count, utilization)
    for (const auto& e : j["entries"]) {
      auto& [count, util] = per_object[e.value("object_id", 0)];
      ++count;
      util += e.value("utilization", std::uint64_t{0});
    }
    for (const auto& [id, stats] : per_object) {
      std::cout << "  object " << id << ": " << stats.first << " entries, utilization "
                << stats.second << "\n";
    }
    return 0;
  }
  if (j.contains("frames") && j["frames"].is_array()) {
    std::cout << path << ": manifest '" << j.value("name", "") << "', "
              << j["frames"].size() << " frames at " << j.value("fps", 0.0) << " fps\n";
    return 0;
  }
  if (j.contains("mean_st_iou")) {
    std::cout << path << ": eval report\n" << j.dump(2) << "\n";
    return 0;
  }
  if (j.contains("config") && j.contains("manifests")) {
    std::cout << path << ": run meta for " << j["manifests"].size() << " sequence(s)\n"
              << j.dump(2) << "\n";
    return 0;
  }
  if (j.contains("objects") && j.contains("dim")) {
    std::cout << path << ": synth spec '" << j.value("name", "") << "', "
              << j["objects"].size() << " objects, " << j.value("frames", 0) << " frames\n";
    return 0;
  }
  std::cout << path << ":\n" << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patch-embedding video object tracker"};
  app.require_subcommand(1);

  TrackOptions track_opts;
  CLI::App* track = app.add_subcommand("track", "run tracking over manifests");
  track->add_option("--manifest", track_opts.manifests, "sequence manifest JSON (repeatable)");
  track->add_option("--meta", track_opts.meta_path, "rerun from a run_meta.json");
  track->add_option("--out", track_opts.out_dir, "output directory")->required();
  track->add_flag("--semi-supervised", track_opts.semi_supervised,
                  "adopt first-frame masks instead of detecting");
  track->add_flag("--dump-bank", track_opts.dump_bank, "write bank.json per sequence");
  track->add_flag("--dump-bank-embeddings", track_opts.dump_bank_embeddings,
                  "include embeddings in bank.json");
  track->add_option("--jobs", track_opts.jobs, "parallel sequences");
  add_config_flags(track);

  std::string synth_spec, synth_out;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic sequence");
  synth->add_option("--spec", synth_spec, "synth spec JSON")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  std::string eval_pred, eval_gt, eval_report, eval_config;
  bool eval_cycle = false;
  CLI::App* eval = app.add_subcommand("eval", "score predictions against ground truth");
  eval->add_option("--pred", eval_pred, "directory with predicted frame_*.lmk")->required();
  eval->add_option("--gt", eval_gt, "ground-truth manifest JSON")->required();
  eval->add_option("--out", eval_report, "write the report JSON here");
  eval->add_flag("--cycle-consistency", eval_cycle, "also run the forward-backward diagnostic");
  add_config_flags(eval);

  std::string inspect_path;
  CLI::App* inspect = app.add_subcommand("inspect", "human-readable dump of an artifact");
  inspect->add_option("path", inspect_path, "result/bank/manifest/report json, .lmk or .egr")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (track->parsed()) {
      track_opts.config_path =
          track->count("--config") ? track->get_option("--config")->as<std::string>() : "";
      return cmd_track(track_opts, track);
    }
    if (synth->parsed()) return cmd_synth(synth_spec, synth_out);
    if (eval->parsed()) {
      eval_config = eval->count("--config") ? eval->get_option("--config")->as<std::string>() : "";
      return cmd_eval(eval_pred, eval_gt, eval_report, eval_cycle, eval_config, eval);
    }
    if (inspect->parsed()) return cmd_inspect(inspect_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
