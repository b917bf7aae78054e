#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>

#include "pcb_sentinel/workflow.hpp"

namespace pcb_sentinel {

inline constexpr const char* kVersion = "0.1.0";

struct ServiceOptions {
  int workers = 2;
  std::filesystem::path audit_log = "audit.jsonl";
  std::filesystem::path static_dir;  // mounted at / when set
  std::size_t max_boards = 64;       // analysed boards kept for re-thresholding; oldest evicted
};

/// HTTP front end over a loaded Runtime.
///
///   GET  /api/health
///   GET  /api/regions
///   POST /api/boards                        multipart field "image" (or a raw image body)
///   GET  /api/jobs/{job_id}
///   GET  /api/boards/{id}/report?threshold=T
///   GET  /api/boards/{id}/overlay.png?threshold=T
///   GET  /api/boards/{id}/registered.png
///   GET  /api/boards/{id}/regions/{region_id}/map   AMAP bytes
///   POST /api/boards/{id}/verdicts          {"verdicts": {region_id: verdict}, ...}
///   GET  /api/boards/{id}/verdicts
///
/// Analysis runs on a bounded worker pool; normalized maps are cached per
/// board so a new threshold only re-binarizes.
class Service {
 public:
  Service(std::shared_ptr<const Runtime> runtime, ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port; throws IOError when binding fails.
  int start(const std::string& host, int port);
  int port() const;
  /// Blocks until stop() is called or the listener exits.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// "host:port" split; a bare port binds 127.0.0.1.
std::pair<std::string, int> parse_bind(const std::string& bind);

}  // namespace pcb_sentinel
