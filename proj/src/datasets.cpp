#include "pcb_sentinel/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::MpiPcb: return "mpi_pcb";
    case DatasetKind::MvtecAd: return "mvtec_ad";
    case DatasetKind::Synthetic: return "synthetic";
  }
  return "unknown";
}

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "mpi_pcb") return DatasetKind::MpiPcb;
  if (s == "mvtec_ad") return DatasetKind::MvtecAd;
  if (s == "synthetic") return DatasetKind::Synthetic;
  throw ArgumentError("unknown dataset kind '" + s + "'");
}

SplitCounts default_split_counts(std::size_t n_normal, std::size_t n_anomalous) {
  if (n_normal == 0) throw EmptyDatasetError("no normal images");
  SplitCounts c;
  c.test = std::min(n_anomalous, n_normal - 1);
  const std::size_t rest = n_normal - c.test;
  c.val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(rest)));
  if (c.val >= rest) c.val = rest - 1;
  c.train = rest - c.val;
  return c;
}

// --- loading ----------------------------------------------------------------------------

namespace {

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LayoutError("missing directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<fs::path> find_by_stem(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".png", ".PNG", ".jpg", ".jpeg"}) {
    const auto p = dir / (stem + ext);
    if (fs::is_regular_file(p)) return p;
  }
  return std::nullopt;
}

void fill_image_size(DatasetManifest& m) {
  const fs::path& probe = !m.train.empty() ? m.train.front() : m.test.front().image;
  const cv::Mat img = cv::imread(probe.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw IOError("cannot decode " + probe.string());
  m.image_w = img.cols;
  m.image_h = img.rows;
}

DatasetManifest from_pinned(const fs::path& root, DatasetKind kind, const json& j) {
  DatasetManifest m;
  m.root = root;
  m.kind = kind;
  auto resolve = [&root](const std::string& rel) {
    const auto p = root / rel;
    if (!fs::is_regular_file(p)) throw LayoutError("manifest entry missing on disk: " + p.string());
    return p;
  };
  try {
    const auto& s = j.at("splits");
    for (const auto& e : s.at("train")) m.train.push_back(resolve(e.get<std::string>()));
    for (const auto& e : s.at("val")) m.val.push_back(resolve(e.get<std::string>()));
    for (const auto& e : s.at("test")) {
      TestItem t{resolve(e.at("image").get<std::string>()), std::nullopt};
      if (e.contains("mask") && !e["mask"].is_null()) t.mask = resolve(e["mask"].get<std::string>());
      m.test.push_back(std::move(t));
    }
    if (j.contains("counts")) {
      const auto& c = j["counts"];
      if (c.value("train", m.train.size()) != m.train.size() || c.value("val", m.val.size()) != m.val.size() ||
          c.value("test", m.test.size()) != m.test.size()) {
        throw LayoutError("split sizes disagree with the counts pinned in manifest.json");
      }
    }
  } catch (const json::exception& e) {
    throw LayoutError("malformed manifest.json in " + root.string() + ": " + e.what());
  }
  if (m.train.empty()) throw LayoutError("manifest.json lists no training images");
  return m;
}

DatasetManifest load_mpi_layout(const fs::path& root, DatasetKind kind, std::uint64_t seed) {
  const auto normal = list_images(root / "normal");
  if (normal.empty()) throw LayoutError("no images in " + (root / "normal").string());
  std::vector<fs::path> anomalous;
  if (fs::is_directory(root / "anomalous")) anomalous = list_images(root / "anomalous");
  DatasetManifest m;
  m.root = root;
  m.kind = kind;
  auto parts = split(normal, default_split_counts(normal.size(), anomalous.size()), seed);
  m.train = std::move(parts[0]);
  m.val = std::move(parts[1]);
  for (auto& p : parts[2]) m.test.push_back({p, std::nullopt});
  for (const auto& a : anomalous) {
    const auto mask = find_by_stem(root / "masks", a.stem().string());
    if (!mask) throw MaskMismatchError("anomalous image without mask: " + a.string());
    m.test.push_back({a, *mask});
  }
  return m;
}

DatasetManifest load_mvtec_layout(const fs::path& root, std::uint64_t seed) {
  const auto good = list_images(root / "train" / "good");
  if (good.empty()) throw LayoutError("no images in " + (root / "train" / "good").string());
  DatasetManifest m;
  m.root = root;
  m.kind = DatasetKind::MvtecAd;
  auto parts = split(good, std::array<double, 3>{0.9, 0.1, 0.0}, seed);
  m.train = std::move(parts[0]);
  m.val = std::move(parts[1]);
  if (!fs::is_directory(root / "test")) throw LayoutError("missing directory " + (root / "test").string());
  std::vector<fs::path> defects;
  for (const auto& e : fs::directory_iterator(root / "test")) {
    if (e.is_directory()) defects.push_back(e.path());
  }
  std::sort(defects.begin(), defects.end());
  for (const auto& d : defects) {
    const auto name = d.filename().string();
    for (const auto& img : list_images(d)) {
      if (name == "good") {
        m.test.push_back({img, std::nullopt});
        continue;
      }
      const auto mask = find_by_stem(root / "ground_truth" / name, img.stem().string() + "_mask");
      if (!mask) throw MaskMismatchError("defect image without mask: " + img.string());
      m.test.push_back({img, *mask});
    }
  }
  return m;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root, DatasetKind kind, std::uint64_t seed) {
  if (!fs::is_directory(root)) throw LayoutError("dataset root does not exist: " + root.string());
  DatasetManifest m;
  const auto pinned = root / "manifest.json";
  if (fs::is_regular_file(pinned)) {
    std::ifstream in(pinned);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw LayoutError("malformed manifest.json: " + std::string(e.what()));
    }
    m = from_pinned(root, kind, j);
  } else if (kind == DatasetKind::MvtecAd) {
    m = load_mvtec_layout(root, seed);
  } else {
    m = load_mpi_layout(root, kind, seed);
  }
  // Normal images must never leak into the test split.
  std::set<fs::path> seen(m.train.begin(), m.train.end());
  seen.insert(m.val.begin(), m.val.end());
  if (seen.size() != m.train.size() + m.val.size()) throw LayoutError("train and val splits overlap");
  for (const auto& t : m.test) {
    if (seen.count(t.image)) throw LayoutError("test image also used for training: " + t.image.string());
  }
  fill_image_size(m);
  return m;
}

json to_json(const DatasetManifest& m) {
  auto rel = [&m](const fs::path& p) { return fs::relative(p, m.root).generic_string(); };
  json train = json::array(), val = json::array(), test = json::array();
  for (const auto& p : m.train) train.push_back(rel(p));
  for (const auto& p : m.val) val.push_back(rel(p));
  for (const auto& t : m.test) test.push_back({{"image", rel(t.image)}, {"mask", t.mask ? json(rel(*t.mask)) : json()}});
  return json{{"kind", to_string(m.kind)},
              {"image_size", {m.image_w, m.image_h}},
              {"counts", {{"train", m.train.size()}, {"val", m.val.size()}, {"test", m.test.size()}}},
              {"splits", {{"train", train}, {"val", val}, {"test", test}}}};
}

void write_manifest(const DatasetManifest& m) {
  std::ofstream out(m.root / "manifest.json");
  if (!out) throw IOError("cannot write " + (m.root / "manifest.json").string());
  out << to_json(m).dump(2) << '\n';
}

// --- synthetic boards ----------------------------------------------------------------------

std::string to_string(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::PastePatch: return "paste_patch";
    case AnomalyKind::RemoveComponent: return "remove_component";
    case AnomalyKind::JumperLine: return "jumper_line";
  }
  return "unknown";
}

AnomalyKind parse_anomaly_kind(const std::string& s) {
  if (s == "paste_patch") return AnomalyKind::PastePatch;
  if (s == "remove_component") return AnomalyKind::RemoveComponent;
  if (s == "jumper_line") return AnomalyKind::JumperLine;
  throw ArgumentError("unknown anomaly kind '" + s + "'");
}

void SyntheticSpec::validate() const {
  if (board_w < 16 || board_h < 16) throw ArgumentError("synthetic boards must be at least 16x16");
  if (components < 0) throw ArgumentError("component count must be non-negative");
  if (kinds.empty()) throw ArgumentError("at least one anomaly kind is required");
  if (min_anomaly_px < 4 || max_anomaly_px < min_anomaly_px || max_anomaly_px > std::min(board_w, board_h)) {
    throw ArgumentError("anomaly size range must satisfy 4 <= min <= max <= board side");
  }
  if (!(brightness_jitter >= 0.0f && brightness_jitter < 1.0f) || !(perspective_jitter_px >= 0.0f) ||
      !(noise_sigma >= 0.0f)) {
    throw ArgumentError("invalid jitter settings");
  }
}

void to_json(json& j, const SyntheticSpec& s) {
  json kinds = json::array();
  for (auto k : s.kinds) kinds.push_back(to_string(k));
  j = json{{"board_size", {s.board_w, s.board_h}},
           {"texture_seed", s.texture_seed},
           {"components", s.components},
           {"anomaly_kinds", kinds},
           {"anomaly_size_range", {s.min_anomaly_px, s.max_anomaly_px}},
           {"brightness_jitter", s.brightness_jitter},
           {"perspective_jitter_px", s.perspective_jitter_px},
           {"noise_sigma", s.noise_sigma}};
}

void from_json(const json& j, SyntheticSpec& s) {
  const SyntheticSpec d;
  if (j.contains("board_size")) {
    s.board_w = j["board_size"].at(0);
    s.board_h = j["board_size"].at(1);
  }
  s.texture_seed = j.value("texture_seed", d.texture_seed);
  s.components = j.value("components", d.components);
  if (j.contains("anomaly_kinds")) {
    s.kinds.clear();
    for (const auto& k : j["anomaly_kinds"]) s.kinds.push_back(parse_anomaly_kind(k.get<std::string>()));
  }
  if (j.contains("anomaly_size_range")) {
    s.min_anomaly_px = j["anomaly_size_range"].at(0);
    s.max_anomaly_px = j["anomaly_size_range"].at(1);
  }
  s.brightness_jitter = j.value("brightness_jitter", d.brightness_jitter);
  s.perspective_jitter_px = j.value("perspective_jitter_px", d.perspective_jitter_px);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
}

namespace {

enum class Part { Ic, Resistor, Capacitor };

struct Component {
  cv::Rect rect;
  Part part;
};

struct Layout {
  cv::Mat background;  // CV_32FC3, RGB
  std::vector<Component> components;
};

cv::Scalar rgb(float r, float g, float b) { return cv::Scalar(r, g, b); }

Layout make_layout(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.texture_seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const int w = spec.board_w, h = spec.board_h;
  const int unit = std::max(1, std::min(w, h) / 64);
  Layout lay;
  lay.background = cv::Mat(h, w, CV_32FC3);
  // Solder-mask green with a slow gradient and a fixed grain.
  const float fx = 1.0f + 2.0f * u(rng), fy = 1.0f + 2.0f * u(rng), ph = 6.28f * u(rng);
  std::normal_distribution<float> grain(0.0f, 0.015f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float wave = 0.03f * std::sin(fx * 6.28f * x / w + fy * 6.28f * y / h + ph);
      const float g = grain(rng);
      lay.background.at<cv::Vec3f>(y, x) = cv::Vec3f(0.08f + wave + g, 0.36f + wave + g, 0.18f + g);
    }
  }
  // Copper traces on a coarse lattice.
  const int traces = 3 + static_cast<int>(u(rng) * 4);
  for (int i = 0; i < traces; ++i) {
    const bool horizontal = u(rng) < 0.5f;
    const int pos = static_cast<int>(u(rng) * (horizontal ? h : w));
    const int a = static_cast<int>(u(rng) * 0.5f * (horizontal ? w : h));
    const int b = a + static_cast<int>((0.3f + 0.5f * u(rng)) * (horizontal ? w : h));
    const cv::Point p0 = horizontal ? cv::Point(a, pos) : cv::Point(pos, a);
    const cv::Point p1 = horizontal ? cv::Point(b, pos) : cv::Point(pos, b);
    cv::line(lay.background, p0, p1, rgb(0.72f, 0.58f, 0.28f), unit, cv::LINE_8);
  }
  // Components: rejection-sampled, non-overlapping boxes.
  const int side = std::min(w, h);
  for (int tries = 0; tries < 400 && static_cast<int>(lay.components.size()) < spec.components; ++tries) {
    const int cw = std::max(4, static_cast<int>((0.12f + 0.16f * u(rng)) * side));
    const int ch = std::max(4, static_cast<int>((0.12f + 0.16f * u(rng)) * side));
    const int x = static_cast<int>(u(rng) * (w - cw));
    const int y = static_cast<int>(u(rng) * (h - ch));
    const auto part = static_cast<Part>(static_cast<int>(u(rng) * 3) % 3);
    cv::Rect r(x, y, cw, ch);
    const cv::Rect grown(x - unit, y - unit, cw + 2 * unit, ch + 2 * unit);
    bool clash = false;
    for (const auto& c : lay.components) clash = clash || (c.rect & grown).area() > 0;
    if (!clash) lay.components.push_back({r, part});
  }
  return lay;
}

void draw_component(cv::Mat& img, const Component& c, int unit) {
  const cv::Rect& r = c.rect;
  switch (c.part) {
    case Part::Ic: {
      cv::rectangle(img, r, rgb(0.78f, 0.78f, 0.80f), cv::FILLED);  // pins show around the body
      const cv::Rect body(r.x, r.y + unit, r.width, std::max(1, r.height - 2 * unit));
      cv::rectangle(img, body, rgb(0.12f, 0.12f, 0.14f), cv::FILLED);
      for (int x = r.x + unit; x < r.x + r.width; x += 2 * unit) {
        cv::rectangle(img, cv::Rect(x, r.y, unit, unit), rgb(0.12f, 0.30f, 0.15f), cv::FILLED);
        cv::rectangle(img, cv::Rect(x, r.y + r.height - unit, unit, unit), rgb(0.12f, 0.30f, 0.15f), cv::FILLED);
      }
      cv::circle(img, cv::Point(r.x + 2 * unit, r.y + 2 * unit), unit, rgb(0.5f, 0.5f, 0.5f), cv::FILLED);
      break;
    }
    case Part::Resistor: {
      cv::rectangle(img, r, rgb(0.82f, 0.70f, 0.48f), cv::FILLED);
      const bool across = r.width >= r.height;
      const int len = across ? r.width : r.height;
      const cv::Scalar bands[3] = {rgb(0.55f, 0.25f, 0.1f), rgb(0.1f, 0.1f, 0.1f), rgb(0.85f, 0.1f, 0.1f)};
      for (int k = 0; k < 3; ++k) {
        const int at = len * (k + 1) / 4;
        const cv::Rect band = across ? cv::Rect(r.x + at, r.y, unit, r.height) : cv::Rect(r.x, r.y + at, r.width, unit);
        cv::rectangle(img, band, bands[k], cv::FILLED);
      }
      break;
    }
    case Part::Capacitor: {
      const cv::Point centre(r.x + r.width / 2, r.y + r.height / 2);
      const int radius = std::max(2, std::min(r.width, r.height) / 2);
      cv::circle(img, centre, radius, rgb(0.18f, 0.28f, 0.62f), cv::FILLED);
      cv::circle(img, centre, std::max(1, radius / 2), rgb(0.75f, 0.78f, 0.85f), cv::FILLED);
      break;
    }
  }
}

cv::Mat render_layout(const Layout& lay, int unit, int removed) {
  cv::Mat img = lay.background.clone();
  for (int i = 0; i < static_cast<int>(lay.components.size()); ++i) {
    if (i != removed) draw_component(img, lay.components[i], unit);
  }
  return img;
}

BinaryMask mask_from(const cv::Mat& m8) {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(m8.rows) * m8.cols);
  for (int y = 0; y < m8.rows; ++y) {
    for (int x = 0; x < m8.cols; ++x) v[static_cast<std::size_t>(y) * m8.cols + x] = m8.at<std::uint8_t>(y, x) ? 1 : 0;
  }
  return BinaryMask(m8.rows, m8.cols, std::move(v));
}

}  // namespace

SyntheticBoard render_synthetic_board(const SyntheticSpec& spec, std::uint64_t seed, bool anomalous) {
  spec.validate();
  const Layout lay = make_layout(spec);
  const int w = spec.board_w, h = spec.board_h;
  const int unit = std::max(1, std::min(w, h) / 64);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  auto sym = [&](float r) { return r > 0.0f ? (2.0f * u(rng) - 1.0f) * r : 0.0f; };

  // Draw order: anomaly kind, removed component, brightness, corner jitter,
  // anomaly geometry, pixel noise.
  std::optional<AnomalyKind> kind;
  if (anomalous) {
    kind = spec.kinds[static_cast<std::size_t>(u(rng) * spec.kinds.size()) % spec.kinds.size()];
    if (*kind == AnomalyKind::RemoveComponent && lay.components.empty()) kind = AnomalyKind::PastePatch;
  }
  int removed = -1;
  if (kind == AnomalyKind::RemoveComponent) {
    removed = static_cast<int>(u(rng) * lay.components.size()) % static_cast<int>(lay.components.size());
  }
  const float gain = 1.0f + sym(spec.brightness_jitter);
  std::vector<cv::Point2f> src{{0, 0}, {float(w - 1), 0}, {float(w - 1), float(h - 1)}, {0, float(h - 1)}};
  std::vector<cv::Point2f> dst = src;
  for (auto& p : dst) {
    p.x += sym(spec.perspective_jitter_px);
    p.y += sym(spec.perspective_jitter_px);
  }
  const cv::Mat H = cv::getPerspectiveTransform(src, dst);

  cv::Mat img;
  cv::warpPerspective(render_layout(lay, unit, removed), img, H, cv::Size(w, h), cv::INTER_LINEAR,
                      cv::BORDER_REFLECT_101);
  img *= gain;

  cv::Mat m8 = cv::Mat::zeros(h, w, CV_8UC1);
  if (kind == AnomalyKind::RemoveComponent) {
    cv::Mat footprint = cv::Mat::zeros(h, w, CV_8UC1);
    cv::rectangle(footprint, lay.components[removed].rect, cv::Scalar(255), cv::FILLED);
    cv::warpPerspective(footprint, m8, H, cv::Size(w, h), cv::INTER_NEAREST, cv::BORDER_CONSTANT);
  } else if (kind == AnomalyKind::PastePatch) {
    std::uniform_int_distribution<int> size(spec.min_anomaly_px, spec.max_anomaly_px);
    const int pw = size(rng), ph = size(rng);
    const int x0 = std::uniform_int_distribution<int>(0, w - pw)(rng);
    const int y0 = std::uniform_int_distribution<int>(0, h - ph)(rng);
    static const cv::Vec3f palette[] = {{0.90f, 0.15f, 0.10f}, {0.95f, 0.85f, 0.20f}, {0.20f, 0.40f, 0.95f},
                                        {0.95f, 0.95f, 0.95f}, {0.60f, 0.20f, 0.70f}};
    const cv::Vec3f colour = palette[static_cast<std::size_t>(u(rng) * 5) % 5];
    const bool stripes_x = u(rng) < 0.5f;
    for (int y = y0; y < y0 + ph; ++y) {
      for (int x = x0; x < x0 + pw; ++x) {
        const int k = ((stripes_x ? x - x0 : y - y0) / (2 * unit)) % 2;
        img.at<cv::Vec3f>(y, x) = colour * (k ? 0.7f : 1.0f);
        m8.at<std::uint8_t>(y, x) = 255;
      }
    }
  } else if (kind == AnomalyKind::JumperLine) {
    const int thickness = std::max(4, std::min(w, h) / 64);
    std::uniform_int_distribution<int> len(spec.min_anomaly_px, spec.max_anomaly_px);
    for (int attempt = 0; attempt < 100; ++attempt) {
      m8.setTo(0);
      const float angle = 6.2831853f * u(rng);
      const float length = static_cast<float>(len(rng));
      const cv::Point p0(static_cast<int>(u(rng) * w), static_cast<int>(u(rng) * h));
      const cv::Point p1(static_cast<int>(p0.x + length * std::cos(angle)), static_cast<int>(p0.y + length * std::sin(angle)));
      cv::line(m8, p0, p1, cv::Scalar(255), thickness, cv::LINE_8);
      const cv::Rect box = cv::boundingRect(m8);
      if (box.width >= 4 && box.height >= 4 && cv::countNonZero(m8) >= 16) break;
    }
    const cv::Vec3f wire(0.85f, 0.10f, 0.10f);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (m8.at<std::uint8_t>(y, x)) img.at<cv::Vec3f>(y, x) = wire;
      }
    }
  }

  if (spec.noise_sigma > 0.0f) {
    std::normal_distribution<float> noise(0.0f, spec.noise_sigma);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        auto& px = img.at<cv::Vec3f>(y, x);
        for (int c = 0; c < 3; ++c) px[c] += noise(rng);
      }
    }
  }

  std::vector<float> pixels(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto& px = img.at<cv::Vec3f>(y, x);
      for (int c = 0; c < 3; ++c) {
        pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] = std::clamp(px[c], 0.0f, 1.0f);
      }
    }
  }
  SyntheticBoard out{Raster(h, w, ColorSpace::Rgb, std::move(pixels)), mask_from(m8), std::nullopt};
  if (kind) {
    const cv::Rect box = cv::boundingRect(m8);
    out.anomaly = SyntheticAnomaly{"", *kind, box.x, box.y, box.width, box.height};
  }
  return out;
}

fs::path generate_synthetic(const SyntheticSpec& spec, int n_normal, int n_anomalous, std::uint64_t seed,
                            const fs::path& root) {
  spec.validate();
  if (n_normal < 2 || n_anomalous < 0) throw ArgumentError("need at least two normal boards and n_anomalous >= 0");
  for (const char* sub : {"normal", "anomalous", "masks"}) fs::create_directories(root / sub);

  std::mt19937_64 seeds(seed);
  char name[64];
  std::vector<fs::path> normal;
  for (int i = 0; i < n_normal; ++i) {
    const auto board = render_synthetic_board(spec, seeds(), false);
    std::snprintf(name, sizeof name, "normal_%04d.png", i);
    normal.push_back(root / "normal" / name);
    save_raster(normal.back(), board.image);
  }
  DatasetManifest m;
  m.root = root;
  m.kind = DatasetKind::Synthetic;
  m.image_w = spec.board_w;
  m.image_h = spec.board_h;
  auto parts = split(normal, default_split_counts(normal.size(), static_cast<std::size_t>(n_anomalous)), seed);
  m.train = std::move(parts[0]);
  m.val = std::move(parts[1]);
  for (auto& p : parts[2]) m.test.push_back({p, std::nullopt});

  json anomalies = json::array();
  for (int i = 0; i < n_anomalous; ++i) {
    auto board = render_synthetic_board(spec, seeds(), true);
    std::snprintf(name, sizeof name, "anomalous_%04d.png", i);
    const auto img = root / "anomalous" / name;
    const auto mask = root / "masks" / name;
    save_raster(img, board.image);
    save_mask(mask, board.mask);
    m.test.push_back({img, mask});
    const auto& a = *board.anomaly;
    anomalies.push_back({{"image", std::string("anomalous/") + name},
                         {"kind", to_string(a.kind)},
                         {"bbox", {a.x0, a.y0, a.width, a.height}},
                         {"mask_pixels", board.mask.popcount()}});
  }
  write_manifest(m);
  json meta{{"seed", seed}, {"n_normal", n_normal}, {"n_anomalous", n_anomalous}, {"anomalies", anomalies}};
  to_json(meta["spec"], spec);
  std::ofstream out(root / "synthetic.json");
  if (!out) throw IOError("cannot write " + (root / "synthetic.json").string());
  out << meta.dump(2) << '\n';
  return root;
}

}  // namespace pcb_sentinel
