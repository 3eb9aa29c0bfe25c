#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cycletrack/error.hpp"
#include "cycletrack/evalkit.hpp"
#include "cycletrack/memory_bank.hpp"
#include "cycletrack/tracker.hpp"

// JSON (de)serialization for configs, synth specs, results and run metadata.
// Everything here round-trips: a run_meta.json reproduces its run exactly.

namespace cycletrack {

inline nlohmann::json tracker_config_to_json(const TrackerConfig& c) {
  return {
      {"k_points", c.k_points},
      {"redetect_interval", c.redetect_interval},
      {"out_limit", c.out_limit},
      {"new_object_iou", c.new_object_iou},
      {"memory_capacity", c.memory_capacity},
      {"grid_side", c.grid_side},
      {"q_min", c.q_min},
      {"s_min", c.s_min},
      {"nms_iou", c.nms_iou},
      {"min_mask_patches", c.min_mask_patches},
      {"min_pair_similarity", c.min_pair_similarity},
      {"segmenter", c.segmenter},
      {"default_tau", c.segmenter_config.default_tau},
      {"signature_keep", c.segmenter_config.signature_keep},
      {"area_keep", c.segmenter_config.area_keep},
      {"stability_delta", c.segmenter_config.stability_delta},
      {"workers", c.workers},
      {"disable_memory", c.disable_memory},
      {"disable_cycle_pairs", c.disable_cycle_pairs},
      {"disable_object_state", c.disable_object_state},
  };
}

inline TrackerConfig tracker_config_from_json(const nlohmann::json& j,
                                              const std::string& origin) {
  TrackerConfig c;
  try {
    c.k_points = j.value("k_points", c.k_points);
    c.redetect_interval = j.value("redetect_interval", c.redetect_interval);
    c.out_limit = j.value("out_limit", c.out_limit);
    c.new_object_iou = j.value("new_object_iou", c.new_object_iou);
    c.memory_capacity = j.value("memory_capacity", c.memory_capacity);
    c.grid_side = j.value("grid_side", c.grid_side);
    c.q_min = j.value("q_min", c.q_min);
    c.s_min = j.value("s_min", c.s_min);
    c.nms_iou = j.value("nms_iou", c.nms_iou);
    c.min_mask_patches = j.value("min_mask_patches", c.min_mask_patches);
    c.min_pair_similarity = j.value("min_pair_similarity", c.min_pair_similarity);
    c.segmenter = j.value("segmenter", c.segmenter);
    c.segmenter_config.default_tau = j.value("default_tau", c.segmenter_config.default_tau);
    c.segmenter_config.signature_keep = j.value("signature_keep", c.segmenter_config.signature_keep);
    c.segmenter_config.area_keep = j.value("area_keep", c.segmenter_config.area_keep);
    c.segmenter_config.stability_delta =
        j.value("stability_delta", c.segmenter_config.stability_delta);
    c.workers = j.value("workers", c.workers);
    c.disable_memory = j.value("disable_memory", c.disable_memory);
    c.disable_cycle_pairs = j.value("disable_cycle_pairs", c.disable_cycle_pairs);
    c.disable_object_state = j.value("disable_object_state", c.disable_object_state);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::config_error, origin + ": " + e.what());
  }
  validate_config(c);
  return c;
}

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
  nlohmann::json objects = nlohmann::json::array();
  for (const ObjectSpec& o : s.objects) {
    nlohmann::json jo = {
        {"label", o.label},
        {"top", o.top},
        {"left", o.left},
        {"height", o.height},
        {"width", o.width},
        {"vel_row", o.vel_row},
        {"vel_col", o.vel_col},
        {"deform_amplitude", o.deform_amplitude},
        {"deform_period", o.deform_period},
        {"visible_from", o.visible_from},
    };
    if (o.visible_until != std::numeric_limits<int>::max()) jo["visible_until"] = o.visible_until;
    if (!o.hidden.empty()) {
      nlohmann::json windows = nlohmann::json::array();
      for (const auto& [from, until] : o.hidden) windows.push_back({from, until});
      jo["hidden"] = std::move(windows);
    }
    if (o.derive_from) {
      jo["derive_from"] = *o.derive_from;
      jo["derive_epsilon"] = o.derive_epsilon;
    }
    if (o.inside_of) jo["inside_of"] = *o.inside_of;
    objects.push_back(std::move(jo));
  }
  return {
      {"height", s.height},   {"width", s.width},
      {"dim", s.dim},         {"frames", s.frames},
      {"seed", s.seed},       {"noise_sigma", s.noise_sigma},
      {"max_signature_cosine", s.max_signature_cosine},
      {"fps", s.fps},         {"name", s.name},
      {"objects", std::move(objects)},
  };
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j, const std::string& origin) {
  SynthSpec s;
  try {
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.dim = j.at("dim").get<int>();
    s.frames = j.at("frames").get<int>();
    s.seed = j.value("seed", std::uint64_t{0});
    s.noise_sigma = j.value("noise_sigma", 0.0);
    s.max_signature_cosine = j.value("max_signature_cosine", 0.3);
    s.fps = j.value("fps", 10.0);
    s.name = j.value("name", std::string("synthetic"));
    for (const auto& jo : j.value("objects", nlohmann::json::array())) {
      ObjectSpec o;
      o.label = jo.value("label", 0);
      o.top = jo.value("top", -1);
      o.left = jo.value("left", -1);
      o.height = jo.value("height", 4);
      o.width = jo.value("width", 4);
      o.vel_row = jo.value("vel_row", 0.0);
      o.vel_col = jo.value("vel_col", 0.0);
      o.deform_amplitude = jo.value("deform_amplitude", 0.0);
      o.deform_period = jo.value("deform_period", 24);
      o.visible_from = jo.value("visible_from", 0);
      o.visible_until = jo.value("visible_until", std::numeric_limits<int>::max());
      for (const auto& window : jo.value("hidden", nlohmann::json::array())) {
        o.hidden.emplace_back(window.at(0).get<int>(), window.at(1).get<int>());
      }
      if (jo.contains("derive_from")) {
        o.derive_from = jo["derive_from"].get<std::size_t>();
        o.derive_epsilon = jo.value("derive_epsilon", o.derive_epsilon);
      }
      if (jo.contains("inside_of")) o.inside_of = jo["inside_of"].get<std::size_t>();
      s.objects.push_back(std::move(o));
    }
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::config_error, origin + ": " + e.what());
  }
  return s;
}

inline nlohmann::json result_to_json(const SequenceResult& result) {
  nlohmann::json tracklets = nlohmann::json::array();
  for (const Tracklet& t : result.tracklets) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& [frame, mask] : t.masks) frames.push_back(frame);
    tracklets.push_back({
        {"id", t.id},
        {"birth_frame", t.birth_frame},
        {"death_frame", t.death_frame},
        {"alive", t.alive},
        {"out_counter", t.out_counter},
        {"present_frames", std::move(frames)},
    });
  }
  nlohmann::json errors = nlohmann::json::array();
  for (std::size_t i = 0; i < result.frame_errors.size(); ++i) {
    if (!result.frame_errors[i].empty()) {
      errors.push_back({{"frame", i}, {"error", result.frame_errors[i]}});
    }
  }
  return {
      {"frames", result.labels.size()},
      {"no_objects_detected", result.no_objects_detected},
      {"tracklets", std::move(tracklets)},
      {"frame_errors", std::move(errors)},
  };
}

inline nlohmann::json bank_to_json(const MemoryBank& bank, bool include_embeddings = false) {
  nlohmann::json entries = nlohmann::json::array();
  for (const MemoryEntry& e : bank.entries()) {
    nlohmann::json je = {
        {"object_id", e.object_id},
        {"frame_of_origin", e.frame_of_origin},
        {"utilization", e.utilization},
    };
    if (include_embeddings) je["embedding"] = e.embedding;
    entries.push_back(std::move(je));
  }
  return {
      {"capacity", bank.capacity()},
      {"size", bank.size()},
      {"initial_frame", bank.initial_frame()},
      {"latest_frame", bank.latest_frame()},
      {"entries", std::move(entries)},
  };
}

inline nlohmann::json eval_report_to_json(const EvalReport& report) {
  nlohmann::json per_iou = nlohmann::json::object();
  nlohmann::json per_st = nlohmann::json::object();
  nlohmann::json matched = nlohmann::json::object();
  for (const auto& [id, v] : report.per_object_iou) per_iou[std::to_string(id)] = v;
  for (const auto& [id, v] : report.per_object_st_iou) per_st[std::to_string(id)] = v;
  for (const auto& [id, v] : report.matched_pred) matched[std::to_string(id)] = v;
  nlohmann::json j = {
      {"per_object_iou", std::move(per_iou)},
      {"per_object_st_iou", std::move(per_st)},
      {"matched_pred", std::move(matched)},
      {"mean_st_iou", report.mean_st_iou},
      {"ar_n", report.ar_n},
      {"ar", report.ar},
      {"id_switches", report.id_switch_count},
      {"cycle_consistency_iou", nullptr},
  };
  if (report.cycle_consistency_iou) j["cycle_consistency_iou"] = *report.cycle_consistency_iou;
  return j;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::io_failure, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::config_error, path + ": " + e.what());
  }
  return j;
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(ErrorCode::io_failure, "cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) raise(ErrorCode::io_failure, "write failed for " + path);
}

struct RunMeta {
  TrackerConfig config;
  std::vector<std::string> manifests;
  bool semi_supervised = false;
};

inline nlohmann::json run_meta_to_json(const RunMeta& meta) {
  return {
      {"config", tracker_config_to_json(meta.config)},
      {"manifests", meta.manifests},
      {"semi_supervised", meta.semi_supervised},
  };
}

inline RunMeta run_meta_from_json(const nlohmann::json& j, const std::string& origin) {
  RunMeta meta;
  try {
    meta.config = tracker_config_from_json(j.at("config"), origin);
    meta.manifests = j.at("manifests").get<std::vector<std::string>>();
    meta.semi_supervised = j.value("semi_supervised", false);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::config_error, origin + ": " + e.what());
  }
  return meta;
}

}  // namespace cycletrack
