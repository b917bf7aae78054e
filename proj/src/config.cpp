#include "pcb_sentinel/config.hpp"

#include <cstdlib>
#include <fstream>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

const char* env(const char* name) {
  const char* v = std::getenv(name);
  return (v && *v) ? v : nullptr;
}

}  // namespace

AppConfig parse_config(const json& j, const fs::path& base) {
  AppConfig c;
  try {
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      c.dataset_root = resolve(base, d.value("root", std::string()));
      c.dataset_kind = parse_dataset_kind(d.value("kind", std::string("mpi_pcb")));
      c.split_seed = d.value("split_seed", c.split_seed);
    }
    if (j.contains("grid")) {
      c.grid.side = j["grid"].value("side", c.grid.side);
      c.grid.out_side = j["grid"].value("out_side", c.grid.out_side);
    }
    c.regions = j.value("regions", c.regions);
    c.models_dir = resolve(base, j.value("models_dir", c.models_dir.string()));
    if (j.contains("cache_dir")) c.cache_dir = resolve(base, j["cache_dir"].get<std::string>());
    if (j.contains("model")) c.model = j["model"].get<CaeConfig>();
    if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
    if (j.contains("extractor")) {
      c.loss_layers = j["extractor"].value("loss_layers", c.loss_layers);
      c.anomaly_layer = j["extractor"].value("anomaly_layer", c.anomaly_layer);
    }
    if (j.contains("registration")) {
      const auto& r = j["registration"];
      auto& rc = c.registration.config;
      c.registration.enabled = r.value("enabled", false);
      c.registration.reference = resolve(base, r.value("reference", std::string()));
      rc.ratio = r.value("ratio", rc.ratio);
      rc.reproj_threshold = r.value("reproj_threshold", rc.reproj_threshold);
      rc.max_iters = r.value("max_iters", rc.max_iters);
      rc.seed = r.value("seed", rc.seed);
      rc.max_mean_reprojection_error = r.value("max_mean_reprojection_error", rc.max_mean_reprojection_error);
    }
    if (j.contains("evaluation")) {
      const auto& e = j["evaluation"];
      c.evaluation.n_thresholds = e.value("n_thresholds", c.evaluation.n_thresholds);
      c.evaluation.output_dir = e.value("output_dir", c.evaluation.output_dir.string());
      c.evaluation.calibrate = e.value("calibrate", c.evaluation.calibrate);
    }
    if (j.contains("service")) {
      const auto& s = j["service"];
      c.service.bind = s.value("bind", c.service.bind);
      c.service.workers = s.value("workers", c.service.workers);
      c.service.audit_log = s.value("audit_log", c.service.audit_log.string());
      c.service.static_dir = resolve(base, s.value("static_dir", std::string()));
    }
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("bad config: ") + e.what());
  }
  c.evaluation.output_dir = resolve(base, c.evaluation.output_dir);
  c.service.audit_log = resolve(base, c.service.audit_log);

  if (const char* m = env("PCB_SENTINEL_MODELS")) c.models_dir = m;
  if (c.cache_dir.empty()) {
    if (const char* m = env("PCB_SENTINEL_CACHE")) c.cache_dir = m;
  }

  if (c.grid.side < 1 || c.grid.out_side < 1) throw ArgumentError("grid sides must be positive");
  if (c.grid.out_side != c.model.input_side) {
    throw ArgumentError("grid.out_side (" + std::to_string(c.grid.out_side) + ") must equal model.input_side (" +
                        std::to_string(c.model.input_side) + ")");
  }
  if (c.evaluation.n_thresholds < 2) throw ArgumentError("evaluation.n_thresholds must be at least 2");
  if (c.service.workers < 1) throw ArgumentError("service.workers must be at least 1");
  c.model.validate();
  c.train.validate();
  return c;
}

AppConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j, fs::absolute(path).parent_path());
}

json to_json(const AppConfig& c) {
  json model, train;
  to_json(model, c.model);
  to_json(train, c.train);
  const auto& rc = c.registration.config;
  return json{{"dataset", {{"root", c.dataset_root.string()}, {"kind", to_string(c.dataset_kind)}, {"split_seed", c.split_seed}}},
              {"grid", {{"side", c.grid.side}, {"out_side", c.grid.out_side}}},
              {"regions", c.regions},
              {"models_dir", c.models_dir.string()},
              {"cache_dir", c.cache_dir.string()},
              {"model", model},
              {"train", train},
              {"extractor", {{"loss_layers", c.loss_layers}, {"anomaly_layer", c.anomaly_layer}}},
              {"registration",
               {{"enabled", c.registration.enabled},
                {"reference", c.registration.reference.string()},
                {"ratio", rc.ratio},
                {"reproj_threshold", rc.reproj_threshold},
                {"max_iters", rc.max_iters},
                {"seed", rc.seed},
                {"max_mean_reprojection_error", rc.max_mean_reprojection_error}}},
              {"evaluation",
               {{"n_thresholds", c.evaluation.n_thresholds},
                {"output_dir", c.evaluation.output_dir.string()},
                {"calibrate", c.evaluation.calibrate}}},
              {"service",
               {{"bind", c.service.bind},
                {"workers", c.service.workers},
                {"audit_log", c.service.audit_log.string()},
                {"static_dir", c.service.static_dir.string()}}}};
}

}  // namespace pcb_sentinel
