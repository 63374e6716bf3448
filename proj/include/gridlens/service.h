#pragma once

#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gridlens/config.h"
#include "gridlens/episode_store.h"
#include "gridlens/network.h"

namespace httplib {
class Server;
}

namespace gridlens {

struct ApiRequest {
  std::string method = "GET";
  std::string path;
  std::multimap<std::string, std::string> query;
  std::string body;

  std::optional<std::string> param(const std::string& key) const;
};

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::vector<std::pair<std::string, std::string>> headers;
};

/// Read-only JSON API over one run directory plus snapshot persistence.
/// Routing lives in handle() so it can be exercised without sockets.
class Service {
 public:
  explicit Service(const std::filesystem::path& run_dir);
  ~Service();

  ApiResponse handle(const ApiRequest& req);

  /// Binds and serves until stop(). Throws when the port cannot be bound.
  void listen(const std::string& host, int port, const std::optional<std::filesystem::path>& static_dir = {});
  /// Binds to an ephemeral port and returns it; serve with run_bound().
  int bind_any(const std::string& host);
  void run_bound();
  void stop();

  const RunManifest& manifest() const { return store_.manifest(); }

 private:
  RunStore store_;
  RunConfig config_;
  RoadNetwork net_;
  std::unique_ptr<httplib::Server> server_;

  std::mutex cache_mutex_;
  std::list<std::pair<int, std::shared_ptr<const nlohmann::json>>> analysis_cache_;
  std::list<std::pair<int, std::shared_ptr<const EpisodeRecord>>> record_cache_;
  std::mutex snapshot_mutex_;

  std::shared_ptr<const nlohmann::json> analysis(int episode);
  std::shared_ptr<const EpisodeRecord> record(int episode);

  ApiResponse route(const ApiRequest& req);
  ApiResponse runs() const;
  ApiResponse run() const;
  ApiResponse episodes(const ApiRequest& req) const;
  ApiResponse overview(int episode, const ApiRequest& req);
  ApiResponse states(int episode, const std::string& agent);
  ApiResponse series(int episode, const ApiRequest& req);
  ApiResponse influence(int episode, const ApiRequest& req);
  ApiResponse explain(int episode, const ApiRequest& req);
  ApiResponse replay(int episode, const ApiRequest& req);
  ApiResponse create_snapshot(const ApiRequest& req);
  ApiResponse list_snapshots();
  ApiResponse get_snapshot(const std::string& id);

  void install_routes();
};

/// Explain payload for one agent at one decision step: both surrogate trees,
/// the instance's decision paths and its Shapley attributions. Throws
/// std::out_of_range when step is not a decision boundary.
nlohmann::json explain_payload(const nlohmann::json& analysis, const EpisodeRecord& record, const std::string& agent,
                               int step);

}  // namespace gridlens
