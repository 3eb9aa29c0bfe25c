#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "cycletrack/run_config.hpp"
#include "cycletrack/tensor_io.hpp"
#include "cycletrack/tracker.hpp"

// Manifest-level runs: load a sequence, track it, write the outputs
// (frame_NNNN.lmk per frame, result.json, optional bank.json).

namespace cycletrack {

inline std::string frame_file_name(std::size_t index) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "frame_%04zu.lmk", index);
  return buffer;
}

struct ManifestRun {
  SequenceManifest manifest;
  SequenceResult result;
  std::optional<nlohmann::json> bank_dump;
};

/// Tracks one manifest end to end. Identical inputs and config produce
/// bitwise-identical results; per-frame failures are recorded in the result
/// and the run continues.
inline ManifestRun run_manifest(const std::string& manifest_path, const TrackerConfig& config,
                                bool semi_supervised = false, bool dump_bank = false,
                                bool dump_bank_embeddings = false) {
  const LoadedSequence seq = load_sequence(manifest_path);
  std::optional<LabelMask> first_labels;
  if (semi_supervised) {
    if (!seq.masks.front()) {
      raise(ErrorCode::config_error,
            manifest_path + ": semi-supervised mode needs a first-frame mask");
    }
    first_labels = *seq.masks.front();
  }

  TrackerSession session(seq.frames.front(), first_labels, config);
  for (std::size_t i = 1; i < seq.frames.size(); ++i) {
    session.step(seq.frames[i]);
  }

  ManifestRun run;
  run.manifest = seq.manifest;
  run.result = session.result();
  if (dump_bank && session.memory() != nullptr) {
    run.bank_dump = bank_to_json(*session.memory(), dump_bank_embeddings);
  }
  return run;
}

inline void write_run_outputs(const ManifestRun& run, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  for (std::size_t i = 0; i < run.result.labels.size(); ++i) {
    write_label_mask(run.result.labels[i], (fs::path(directory) / frame_file_name(i)).string());
  }
  write_json_file(result_to_json(run.result), (fs::path(directory) / "result.json").string());
  if (run.bank_dump) {
    write_json_file(*run.bank_dump, (fs::path(directory) / "bank.json").string());
  }
}

}  // namespace cycletrack
