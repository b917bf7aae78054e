#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "pcb_sentinel/cae.hpp"
#include "pcb_sentinel/datasets.hpp"
#include "pcb_sentinel/registration.hpp"
#include "pcb_sentinel/training.hpp"

namespace pcb_sentinel {

struct GridSettings {
  int side = 1024;      // region side on the board, pixels
  int out_side = 256;   // network input side
};

struct RegistrationSettings {
  bool enabled = false;
  std::filesystem::path reference;  // golden board image
  RegistrationConfig config;
};

struct EvaluationSettings {
  int n_thresholds = 256;
  std::filesystem::path output_dir = "eval";
  bool calibrate = false;  // calibrate on the test set before scoring
};

struct ServiceSettings {
  std::string bind = "127.0.0.1:8080";
  int workers = 2;
  std::filesystem::path audit_log = "audit.jsonl";
  std::filesystem::path static_dir;  // inspector UI build, served at /
};

/// The declarative pipeline config. Relative paths are resolved against the
/// directory holding the config file.
struct AppConfig {
  std::filesystem::path dataset_root;
  DatasetKind dataset_kind = DatasetKind::MpiPcb;
  std::uint64_t split_seed = 0;
  GridSettings grid;
  std::vector<std::string> regions;  // empty = every grid region
  std::filesystem::path models_dir = "models";
  std::filesystem::path cache_dir;   // backbone weights
  CaeConfig model;
  TrainConfig train;
  std::vector<int> loss_layers{5, 8, 13, 15};
  int anomaly_layer = 12;
  RegistrationSettings registration;
  EvaluationSettings evaluation;
  ServiceSettings service;
};

/// Parses a config document; `base` anchors relative paths. Environment
/// overrides: PCB_SENTINEL_MODELS for models_dir, PCB_SENTINEL_CACHE for an
/// unset cache_dir.
AppConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base);
AppConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const AppConfig& c);

}  // namespace pcb_sentinel
