#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcb_sentinel/imaging.hpp"

namespace pcb_sentinel {

enum class DatasetKind { MpiPcb, MvtecAd, Synthetic };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& s);  // "mpi_pcb", "mvtec_ad", "synthetic"

struct TestItem {
  std::filesystem::path image;
  std::optional<std::filesystem::path> mask;  // present for anomalous images
};

struct DatasetManifest {
  std::filesystem::path root;
  DatasetKind kind = DatasetKind::MpiPcb;
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> val;
  std::vector<TestItem> test;
  int image_w = 0;
  int image_h = 0;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

/// Normal images held out for testing match the number of anomalous ones
/// (55 + 55 in the MPI-PCB protocol); 10% of the rest goes to validation.
SplitCounts default_split_counts(std::size_t n_normal, std::size_t n_anomalous);

/// Deterministic shuffle (seeded) then consecutive slices of the given sizes.
template <typename T>
std::array<std::vector<T>, 3> split(std::vector<T> items, SplitCounts counts, std::uint64_t seed);
/// Sizes round(n * ratio) for train and val; the remainder goes to test.
template <typename T>
std::array<std::vector<T>, 3> split(std::vector<T> items, std::array<double, 3> ratios, std::uint64_t seed);

/// Reads a dataset root. A manifest.json in the root, when present, pins
/// split membership; otherwise splits are derived with `seed`.
///   MPI-PCB / synthetic: normal/*, anomalous/*, masks/<stem>.png
///   MVTec-AD category:   train/good/*, test/<defect>/*, ground_truth/<defect>/<stem>_mask.png
DatasetManifest load_manifest(const std::filesystem::path& root, DatasetKind kind, std::uint64_t seed = 0);

nlohmann::json to_json(const DatasetManifest& m);
/// Writes root/manifest.json with paths relative to the root.
void write_manifest(const DatasetManifest& m);

// --- synthetic boards ------------------------------------------------------------------

enum class AnomalyKind { PastePatch, RemoveComponent, JumperLine };
std::string to_string(AnomalyKind kind);
AnomalyKind parse_anomaly_kind(const std::string& s);

struct SyntheticSpec {
  int board_w = 64;
  int board_h = 64;
  std::uint64_t texture_seed = 7;  // fixes the shared component layout
  int components = 6;
  std::vector<AnomalyKind> kinds{AnomalyKind::PastePatch, AnomalyKind::RemoveComponent, AnomalyKind::JumperLine};
  int min_anomaly_px = 8;          // side range of injected changes
  int max_anomaly_px = 16;
  float brightness_jitter = 0.05f;
  float perspective_jitter_px = 1.0f;
  float noise_sigma = 0.01f;

  void validate() const;  // throws ArgumentError
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

struct SyntheticAnomaly {
  std::string image;  // relative to the dataset root
  AnomalyKind kind = AnomalyKind::PastePatch;
  int x0 = 0, y0 = 0, width = 0, height = 0;  // bounding box of the mask
};

struct SyntheticBoard {
  Raster image;
  BinaryMask mask;  // all zero for normal boards
  std::optional<SyntheticAnomaly> anomaly;
};

/// One board; `seed` fixes the per-image jitter and the anomaly.
SyntheticBoard render_synthetic_board(const SyntheticSpec& spec, std::uint64_t seed, bool anomalous);

/// Writes an MPI-style tree (normal/, anomalous/, masks/) plus manifest.json
/// and synthetic.json (spec and anomaly boxes); returns `root`.
std::filesystem::path generate_synthetic(const SyntheticSpec& spec, int n_normal, int n_anomalous, std::uint64_t seed,
                                         const std::filesystem::path& root);

}  // namespace pcb_sentinel

#include "pcb_sentinel/detail/split.ipp"
