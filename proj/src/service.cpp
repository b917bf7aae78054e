#include "pcb_sentinel/service.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <httplib.h>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

class WorkerPool {
 public:
  explicit WorkerPool(int n) {
    for (int i = 0; i < n; ++i) threads_.emplace_back([this] { run(); });
  }
  ~WorkerPool() { shutdown(); }

  void submit(std::function<void()> task) {
    {
      std::lock_guard lock(mu_);
      tasks_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

  void shutdown() {
    {
      std::lock_guard lock(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !tasks_.empty(); });
        if (tasks_.empty()) return;  // stopping and drained
        task = std::move(tasks_.front());
        tasks_.pop_front();
      }
      task();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> tasks_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
};

struct Job {
  std::string job_id;
  std::string kind;
  std::string state = "queued";
  std::string created_at;
  std::string board_id;
  std::string error;
};

json to_json(const Job& j) {
  json out{{"job_id", j.job_id},   {"kind", j.kind},         {"state", j.state},
           {"created_at", j.created_at}, {"board_id", j.board_id}, {"result_ref", nullptr}, {"error", nullptr}};
  if (j.state == "done") out["result_ref"] = "/api/boards/" + j.board_id + "/report";
  if (j.state == "failed") out["error"] = j.error;
  return out;
}

const std::set<std::string>& verdict_values() {
  static const std::set<std::string> v{"unreviewed", "confirmed_modification", "false_alarm"};
  return v;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  send_json(res, status, json{{"error", kind}, {"message", message}});
}

int status_for(const Error& e) {
  const std::string k = e.kind();
  if (k == "ArgumentError" || k == "FormatError" || k == "ShapeMismatchError" || k == "ShapeError") return 400;
  if (k == "RegistrationQualityError" || k == "InsufficientFeaturesError" || k == "NoConsensusError" ||
      k == "DegenerateConfigurationError") {
    return 422;
  }
  return 500;
}

}  // namespace

std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  const std::string host = colon == std::string::npos ? "127.0.0.1" : bind.substr(0, colon);
  const std::string port = colon == std::string::npos ? bind : bind.substr(colon + 1);
  try {
    std::size_t used = 0;
    const int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range("port");
    return {host.empty() ? "127.0.0.1" : host, p};
  } catch (const std::exception&) {
    throw ArgumentError("bad bind address '" + bind + "'; expected host:port");
  }
}

struct Service::Impl {
  Impl(std::shared_ptr<const Runtime> rt, ServiceOptions opts)
      : runtime(std::move(rt)), options(std::move(opts)), pool(options.workers) {}

  std::shared_ptr<const Runtime> runtime;
  ServiceOptions options;
  httplib::Server server;
  std::thread listener;
  int bound_port = -1;

  // Job store and board cache: the only mutable state, under one mutex.
  std::mutex mu;
  std::map<std::string, Job> jobs;
  std::map<std::string, std::string> board_jobs;  // board_id -> job_id
  std::map<std::string, std::shared_ptr<const Runtime::Analysis>> boards;
  std::deque<std::string> board_order;
  std::uint64_t next_id = 1;

  std::mutex audit_mu;
  WorkerPool pool;

  void routes();
  void run_job(const std::string& job_id, const std::string& board_id, const Raster& image);

  // Resolves a board for read endpoints; writes the error response and
  // returns null when it is unknown or not analysed yet.
  std::shared_ptr<const Runtime::Analysis> board_or_error(const std::string& id, httplib::Response& res) {
    std::lock_guard lock(mu);
    const auto bj = board_jobs.find(id);
    if (bj == board_jobs.end()) {
      send_error(res, 404, "NotFound", "unknown board '" + id + "'");
      return nullptr;
    }
    const Job& job = jobs.at(bj->second);
    if (job.state != "done") {
      json body{{"error", "NotReady"}, {"message", "board analysis is " + job.state}, {"job", to_json(job)}};
      send_json(res, 409, body);
      return nullptr;
    }
    const auto it = boards.find(id);
    if (it == boards.end()) {
      send_error(res, 410, "Evicted", "board '" + id + "' was evicted from the cache; upload it again");
      return nullptr;
    }
    return it->second;
  }

  // Parses ?threshold=; writes a 400 and returns false when malformed.
  bool threshold_param(const httplib::Request& req, httplib::Response& res, std::optional<float>& t) {
    if (!req.has_param("threshold")) return true;
    const auto s = req.get_param_value("threshold");
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size() || !(v >= 0.0 && v <= 1.0)) throw std::out_of_range("threshold");
      t = static_cast<float>(v);
      return true;
    } catch (const std::exception&) {
      send_error(res, 400, "ArgumentError", "threshold must be a number in [0, 1], got '" + s + "'");
      return false;
    }
  }
};

void Service::Impl::run_job(const std::string& job_id, const std::string& board_id, const Raster& image) {
  {
    std::lock_guard lock(mu);
    jobs.at(job_id).state = "running";
  }
  try {
    auto analysis = std::make_shared<const Runtime::Analysis>(runtime->analyze(image, board_id));
    std::lock_guard lock(mu);
    boards[board_id] = std::move(analysis);
    board_order.push_back(board_id);
    while (board_order.size() > options.max_boards) {
      boards.erase(board_order.front());
      board_order.pop_front();
    }
    jobs.at(job_id).state = "done";
  } catch (const std::exception& e) {
    std::lock_guard lock(mu);
    auto& job = jobs.at(job_id);
    job.state = "failed";
    const auto* pe = dynamic_cast<const Error*>(&e);
    job.error = pe ? std::string(pe->kind()) + ": " + e.what() : std::string(e.what());
  }
}

void Service::Impl::routes() {
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      send_error(res, status_for(e), e.kind(), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "InternalError", e.what());
    }
  });

  server.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
    json ids = json::array();
    for (const auto& r : runtime->grid().regions) ids.push_back(r.region_id);
    send_json(res, 200,
              json{{"status", "ok"},
                   {"version", kVersion},
                   {"regions", ids},
                   {"extractor_pretrained", runtime->extractor().pretrained()},
                   {"workers", options.workers}});
  });

  server.Get("/api/regions", [this](const httplib::Request&, httplib::Response& res) {
    const auto& g = runtime->grid();
    json regions = json::array();
    for (const auto& r : g.regions) {
      const auto& b = runtime->bundles().at(r.region_id);
      regions.push_back({{"region_id", r.region_id},
                         {"x0", r.x0},
                         {"y0", r.y0},
                         {"side", r.side},
                         {"column", r.column},
                         {"row", r.row},
                         {"calibrated", b.norm_range.has_value()},
                         {"threshold", b.threshold.value_or(kFallbackThreshold)},
                         {"threshold_source", b.threshold ? "bundle" : "fallback"}});
    }
    send_json(res, 200,
              json{{"board_w", g.board_w},
                   {"board_h", g.board_h},
                   {"side", g.side},
                   {"min_detection_pixels", kDetectionMinPixels},
                   {"regions", regions}});
  });

  server.Post("/api/boards", [this](const httplib::Request& req, httplib::Response& res) {
    std::string bytes;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) {
        send_error(res, 400, "ArgumentError", "multipart field 'image' is required");
        return;
      }
      bytes = req.get_file_value("image").content;
    } else {
      bytes = req.body;
    }
    if (bytes.empty()) {
      send_error(res, 400, "ArgumentError", "empty upload");
      return;
    }
    Raster image;
    try {
      image = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
    } catch (const Error& e) {
      send_error(res, 400, e.kind(), e.what());
      return;
    }
    Job job;
    {
      std::lock_guard lock(mu);
      char buf[32];
      std::snprintf(buf, sizeof buf, "%06llx", static_cast<unsigned long long>(next_id++));
      job.job_id = std::string("job-") + buf;
      job.board_id = std::string("board-") + buf;
      job.kind = "infer";
      job.created_at = utc_now();
      jobs[job.job_id] = job;
      board_jobs[job.board_id] = job.job_id;
    }
    pool.submit([this, id = job.job_id, board = job.board_id, img = std::move(image)] { run_job(id, board, img); });
    send_json(res, 202, to_json(job));
  });

  server.Get(R"(/api/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    const auto it = jobs.find(req.matches[1]);
    if (it == jobs.end()) {
      send_error(res, 404, "NotFound", "unknown job '" + std::string(req.matches[1]) + "'");
      return;
    }
    send_json(res, 200, to_json(it->second));
  });

  server.Get(R"(/api/boards/([^/]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<float> t;
    if (!threshold_param(req, res, t)) return;
    const auto a = board_or_error(req.matches[1], res);
    if (!a) return;
    const auto report = threshold_board(a->maps, t);
    json j = to_json(report, a->maps.grid);
    j["registration"] = a->registration;
    send_json(res, 200, j);
  });

  server.Get(R"(/api/boards/([^/]+)/overlay\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<float> t;
    if (!threshold_param(req, res, t)) return;
    const auto a = board_or_error(req.matches[1], res);
    if (!a) return;
    const auto report = threshold_board(a->maps, t);
    const auto png = encode_png(render_overlay(a->board, report.board_mask));
    res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
  });

  server.Get(R"(/api/boards/([^/]+)/registered\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto a = board_or_error(req.matches[1], res);
    if (!a) return;
    const auto png = encode_png(a->board);
    res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
  });

  server.Get(R"(/api/boards/([^/]+)/regions/([^/]+)/map)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto a = board_or_error(req.matches[1], res);
    if (!a) return;
    const std::string rid = req.matches[2];
    const auto& regions = a->maps.grid.regions;
    for (std::size_t i = 0; i < regions.size(); ++i) {
      if (regions[i].region_id != rid) continue;
      const auto bytes = encode_float_map(a->maps.maps[i]);
      res.set_content(reinterpret_cast<const char*>(bytes.data()), bytes.size(), "application/octet-stream");
      return;
    }
    send_error(res, 404, "NotFound", "unknown region '" + rid + "'");
  });

  server.Post(R"(/api/boards/([^/]+)/verdicts)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string board_id = req.matches[1];
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      send_error(res, 400, "FormatError", "body must be JSON");
      return;
    }
    if (!body.is_object() || !body.contains("verdicts") || !body["verdicts"].is_object()) {
      send_error(res, 400, "ArgumentError", "expected {\"verdicts\": {region_id: verdict}}");
      return;
    }
    std::optional<float> t;
    if (body.contains("threshold") && !body["threshold"].is_null()) {
      const auto& v = body["threshold"];
      if (!v.is_number() || !(v.get<double>() >= 0.0 && v.get<double>() <= 1.0)) {
        send_error(res, 400, "ArgumentError", "threshold must be a number in [0, 1]");
        return;
      }
      t = v.get<float>();
    }
    const auto a = board_or_error(board_id, res);
    if (!a) return;
    const auto report = threshold_board(a->maps, t);
    json detections = json::object(), verdicts = json::object();
    for (const auto& r : report.regions) {
      detections[r.region_id] = {{"detected", r.detected}, {"anomalous_pixels", r.anomalous_pixels}};
      verdicts[r.region_id] = "unreviewed";
    }
    for (const auto& [rid, v] : body["verdicts"].items()) {
      if (!detections.contains(rid)) {
        send_error(res, 400, "ArgumentError", "unknown region '" + rid + "'");
        return;
      }
      if (!v.is_string() || !verdict_values().count(v.get<std::string>())) {
        send_error(res, 400, "ArgumentError",
                   "verdict for '" + rid + "' must be unreviewed, confirmed_modification or false_alarm");
        return;
      }
      verdicts[rid] = v;
    }
    json record{{"board_id", board_id},
                {"recorded_at", utc_now()},
                {"threshold", t ? json(*t) : json(nullptr)},
                {"inspector", body.value("inspector", std::string())},
                {"verdicts", verdicts},
                {"detections", detections}};
    {
      std::lock_guard lock(audit_mu);
      if (!options.audit_log.parent_path().empty()) fs::create_directories(options.audit_log.parent_path());
      std::ofstream out(options.audit_log, std::ios::app);
      if (!out) throw IOError("cannot append to audit log " + options.audit_log.string());
      out << record.dump() << '\n';
      if (!out.flush()) throw IOError("cannot append to audit log " + options.audit_log.string());
    }
    send_json(res, 201, record);
  });

  server.Get(R"(/api/boards/([^/]+)/verdicts)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string board_id = req.matches[1];
    {
      std::lock_guard lock(mu);
      if (!board_jobs.count(board_id)) {
        send_error(res, 404, "NotFound", "unknown board '" + board_id + "'");
        return;
      }
    }
    json records = json::array();
    std::lock_guard lock(audit_mu);
    std::ifstream in(options.audit_log);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      auto rec = json::parse(line, nullptr, false);
      if (!rec.is_discarded() && rec.value("board_id", std::string()) == board_id) records.push_back(std::move(rec));
    }
    send_json(res, 200, json{{"board_id", board_id}, {"records", records}});
  });

  if (!options.static_dir.empty()) {
    if (!server.set_mount_point("/", options.static_dir.string())) {
      throw IOError("static directory not found: " + options.static_dir.string());
    }
  }
}

Service::Service(std::shared_ptr<const Runtime> runtime, ServiceOptions options) {
  if (!runtime) throw ArgumentError("service needs a runtime");
  if (options.workers < 1) throw ArgumentError("service needs at least one worker");
  impl_ = std::make_unique<Impl>(std::move(runtime), std::move(options));
  impl_->routes();
}

Service::~Service() { stop(); }

int Service::start(const std::string& host, int port) {
  auto& s = impl_->server;
  if (port == 0) {
    impl_->bound_port = s.bind_to_any_port(host);
  } else {
    impl_->bound_port = s.bind_to_port(host, port) ? port : -1;
  }
  if (impl_->bound_port < 0) throw IOError("cannot bind " + host + ":" + std::to_string(port));
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  s.wait_until_ready();
  return impl_->bound_port;
}

int Service::port() const { return impl_->bound_port; }

void Service::wait() {
  if (impl_->listener.joinable()) impl_->listener.join();
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
  impl_->pool.shutdown();
}

}  // namespace pcb_sentinel
