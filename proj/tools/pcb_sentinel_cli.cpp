#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pcb_sentinel/errors.hpp"
#include "pcb_sentinel/service.hpp"
#include "pcb_sentinel/workflow.hpp"

namespace fs = std::filesystem;
using namespace pcb_sentinel;

namespace {

struct Options {
  std::string config;
  std::string region;
  std::optional<float> threshold;
  std::optional<std::uint64_t> seed;
  std::string image;
  std::string out;
  std::string bind;
  bool calibrate = false;
  // synth
  int n_normal = 200;
  int n_anomalous = 40;
  int board_side = 64;
  std::vector<std::string> kinds;
  std::string spec;
};

std::optional<std::string> region_of(const Options& o) {
  return o.region.empty() ? std::nullopt : std::optional(o.region);
}

AppConfig config_of(const Options& o) {
  AppConfig c = load_config(o.config);
  if (o.seed) {
    c.train.seed = *o.seed;
    c.model.init_seed = *o.seed;
  }
  return c;
}

int cmd_train(const Options& o) {
  const auto config = config_of(o);
  const auto fx = make_extractor(config);
  if (!fx.pretrained()) std::cerr << "warning: no VGG19 weights in the cache; using the seeded random backbone\n";
  for (const auto& r : train_all(config, fx, region_of(o), &std::cout)) {
    std::cout << r.region_id << ": best epoch " << r.manifest.best_epoch << ", val loss " << r.manifest.best_val_loss
              << " -> " << r.dir.string() << '\n';
  }
  return 0;
}

int cmd_calibrate(const Options& o) {
  const auto config = config_of(o);
  for (const auto& id : calibrate_all(config, make_extractor(config), region_of(o))) {
    std::cout << "calibrated " << id << '\n';
  }
  return 0;
}

int cmd_evaluate(const Options& o) {
  const auto config = config_of(o);
  const auto report = evaluate_all(config, make_extractor(config), o.calibrate || config.evaluation.calibrate,
                                   region_of(o));
  std::cout << render_table(report) << "report written to " << config.evaluation.output_dir.string() << '\n';
  return 0;
}

int cmd_infer(const Options& o) {
  const Runtime rt(config_of(o));
  const fs::path image(o.image);
  const fs::path out = o.out.empty() ? fs::path("inference") / image.stem() : fs::path(o.out);
  const auto analysis = rt.analyze(load_raster(image), image.stem().string());
  const auto report = threshold_board(analysis.maps, o.threshold);
  write_inference(analysis, report, out);
  for (const auto& v : report.regions) {
    std::cout << v.region_id << "  T=" << v.threshold << "  pixels=" << v.anomalous_pixels
              << (v.detected ? "  MODIFIED" : "") << '\n';
  }
  std::cout << (report.any_detected ? "modifications detected" : "no modifications detected") << "; results in "
            << out.string() << '\n';
  return 0;
}

int cmd_serve(const Options& o) {
  auto config = config_of(o);
  if (!o.bind.empty()) config.service.bind = o.bind;
  const auto [host, port] = parse_bind(config.service.bind);
  ServiceOptions so;
  so.workers = config.service.workers;
  so.audit_log = config.service.audit_log;
  so.static_dir = config.service.static_dir;
  auto rt = std::make_shared<const Runtime>(config);
  Service service(rt, so);
  const int bound = service.start(host, port);
  std::cout << "serving " << rt->grid().regions.size() << " regions on http://" << host << ":" << bound << '\n'
            << std::flush;
  service.wait();
  return 0;
}

int cmd_synth(const Options& o) {
  if (o.out.empty()) throw ArgumentError("--out is required");
  SyntheticSpec spec;
  if (!o.spec.empty()) {
    std::ifstream in(o.spec);
    try {
      spec = nlohmann::json::parse(in).get<SyntheticSpec>();
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError("bad --spec file: " + std::string(e.what()));
    }
  } else {
    spec.board_w = spec.board_h = o.board_side;
  }
  if (!o.kinds.empty()) {
    spec.kinds.clear();
    for (const auto& k : o.kinds) spec.kinds.push_back(parse_anomaly_kind(k));
  }
  generate_synthetic(spec, o.n_normal, o.n_anomalous, o.seed.value_or(0), o.out);
  std::cout << "wrote " << o.n_normal << " normal and " << o.n_anomalous << " anomalous boards to " << o.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PCB modification detection with per-region denoising autoencoders"};
  app.require_subcommand(1);
  Options o;

  auto with_config = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "overrides train.seed and model.init_seed");
    return sub;
  };
  auto* train = with_config(app.add_subcommand("train", "train one autoencoder per region"));
  train->add_option("--region", o.region, "train only this region");
  auto* calibrate = with_config(app.add_subcommand("calibrate", "store min/max normalization ranges"));
  calibrate->add_option("--region", o.region);
  auto* evaluate = with_config(app.add_subcommand("evaluate", "score the test split and write reports"));
  evaluate->add_option("--region", o.region);
  evaluate->add_flag("--calibrate", o.calibrate, "calibrate on the test split first");
  auto* infer = with_config(app.add_subcommand("infer", "analyse one board image"));
  infer->add_option("--image", o.image)->required()->check(CLI::ExistingFile);
  infer->add_option("--threshold", o.threshold, "binarization threshold in [0, 1]")->check(CLI::Range(0.0, 1.0));
  infer->add_option("--out", o.out, "output directory");
  auto* serve = with_config(app.add_subcommand("serve", "run the HTTP service"));
  serve->add_option("--bind", o.bind, "host:port (overrides service.bind)");
  auto* synth = app.add_subcommand("synth", "generate a synthetic board dataset");
  synth->add_option("--out", o.out)->required();
  synth->add_option("--normal", o.n_normal);
  synth->add_option("--anomalous", o.n_anomalous);
  synth->add_option("--size", o.board_side, "board side in pixels");
  synth->add_option("--kinds", o.kinds, "paste_patch, remove_component, jumper_line")->delimiter(',');
  synth->add_option("--seed", o.seed);
  synth->add_option("--spec", o.spec, "SyntheticSpec JSON; replaces --size")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(o);
    if (*calibrate) return cmd_calibrate(o);
    if (*evaluate) return cmd_evaluate(o);
    if (*infer) return cmd_infer(o);
    if (*serve) return cmd_serve(o);
    if (*synth) return cmd_synth(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
