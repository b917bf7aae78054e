#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "pcb_sentinel/config.hpp"
#include "pcb_sentinel/datasets.hpp"
#include "support.hpp"

namespace testing_support {

// Small synthetic dataset plus a toy config next to it: 128 px boards cut
// into 64 px regions, two short epochs per region.
inline nlohmann::json workspace_config() {
  return {{"dataset", {{"root", "data"}, {"kind", "synthetic"}, {"split_seed", 0}}},
          {"grid", {{"side", 64}, {"out_side", 64}}},
          {"models_dir", "models"},
          {"model", {{"profile", "toy"}}},
          {"train",
           {{"batch_size", 4}, {"epochs", 2}, {"warmup_epochs", 1}, {"seed", 3},
            {"augmentation", {{"max_offset_px", 0}}}}},
          {"evaluation", {{"output_dir", "eval"}, {"n_thresholds", 64}}},
          {"service", {{"audit_log", "audit.jsonl"}, {"workers", 1}}}};
}

inline std::filesystem::path make_workspace(const std::filesystem::path& dir, int board_side = 128,
                                            nlohmann::json config = workspace_config(), int n_normal = 10,
                                            int n_anomalous = 6) {
  pcb_sentinel::SyntheticSpec spec;
  spec.board_w = spec.board_h = board_side;
  spec.kinds = {pcb_sentinel::AnomalyKind::PastePatch};
  pcb_sentinel::generate_synthetic(spec, n_normal, n_anomalous, 5, dir / "data");
  const auto path = dir / "config.json";
  std::ofstream(path) << config.dump(2);
  return path;
}

inline std::filesystem::path first_image(const std::filesystem::path& dir) {
  std::filesystem::path best;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".png" && (best.empty() || e.path() < best)) best = e.path();
  }
  return best;
}

}  // namespace testing_support
