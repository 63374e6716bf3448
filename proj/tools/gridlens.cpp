#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gridlens/analysis.h"
#include "gridlens/config.h"
#include "gridlens/episode_store.h"
#include "gridlens/service.h"
#include "gridlens/training.h"

namespace fs = std::filesystem;
using namespace gridlens;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

int cmd_train(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  if (const char* env = std::getenv("MARLENS_SEED")) {
    const auto parsed = parse_seed(env);
    if (!parsed) throw UsageError("MARLENS_SEED must be a non-negative integer");
    cfg.seed = *parsed;
  }
  if (seed) cfg.seed = *seed;
  cfg = cfg.resolved();
  cfg.validate();
  const RoadNetwork net = cfg.build_network();

  RunManifest manifest;
  manifest.run_id = cfg.run_id;
  manifest.created_at = cfg.created_at;
  manifest.seed = cfg.seed;
  manifest.config = cfg;
  RunStore store = RunStore::create(out_dir, manifest);
  run_training(cfg.train, cfg.sim, net, &store, [](const EpisodeRecord& rec, const EpisodeStats& stats) {
    std::cerr << to_string(rec.kind) << " episode " << rec.index << ": mean reward " << rec.aggregates.mean_reward
              << ", temperature " << stats.temperature << '\n';
  });
  std::cout << store.dir().string() << '\n';
  return 0;
}

int cmd_analyze(const std::string& run_dir) {
  const RunStore store = RunStore::open(run_dir);
  const RunConfig cfg = store.manifest().config.get<RunConfig>();
  analyze_run(store, cfg.build_network(), cfg.sim, cfg.analysis,
              [](int episode) { std::cerr << "analyzed episode " << episode << '\n'; });
  return 0;
}

int cmd_serve(const std::string& run_dir, const std::string& host, int port, const std::string& static_dir) {
  Service service(run_dir);
  std::cerr << "serving run " << service.manifest().run_id << " on http://" << host << ':' << port << '\n';
  service.listen(host, port, static_dir.empty() ? std::nullopt : std::optional<fs::path>(static_dir));
  return 0;
}

void export_metrics(const RunStore& store, const std::string& format, std::ostream& out) {
  const auto rows = normalize_metrics(store.manifest().episodes);
  if (format == "json") {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) j.push_back(to_json(r));
    out << j.dump(2) << '\n';
    return;
  }
  out << "episode,kind";
  for (const auto& m : metric_names()) out << ',' << m;
  for (const auto& m : metric_names()) out << ",norm_" << m;
  out << '\n';
  for (const auto& r : rows) {
    out << r.index << ',' << to_string(r.kind);
    for (double v : r.raw) out << ',' << v;
    for (double v : r.normalized) out << ',' << v;
    out << '\n';
  }
}

void export_episode(const EpisodeRecord& rec, const std::string& format, std::ostream& out) {
  if (format == "json") {
    out << nlohmann::json(rec.decisions).dump(2) << '\n';
    return;
  }
  out << "step";
  for (const auto& a : rec.agents) {
    for (const char* f : {"queue_n", "queue_s", "queue_w", "queue_e", "phase", "action", "switched", "reward",
                          "queue_after", "critic_value", "prob_ns", "prob_we"}) {
      out << ',' << csv_escape(a + "_" + f);
    }
  }
  out << '\n';
  for (const auto& d : rec.decisions) {
    out << d.step;
    for (std::size_t a = 0; a < rec.agents.size(); ++a) {
      const auto& o = d.observations[a];
      out << ',' << o.queues[0] << ',' << o.queues[1] << ',' << o.queues[2] << ',' << o.queues[3] << ','
          << (o.phase == 0 ? "N-S" : "W-E") << ',' << (d.actions[a] == 0 ? "N-S" : "W-E") << ',' << d.switched[a]
          << ',' << d.rewards[a] << ',' << d.queues_after[a] << ',' << d.critic_values[a] << ','
          << d.probabilities[a][0] << ',' << d.probabilities[a][1];
    }
    out << '\n';
  }
}

int cmd_export(const std::string& run_dir, std::optional<int> episode, const std::string& format,
               const std::string& out_path) {
  const RunStore store = RunStore::open(run_dir);
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write " + out_path);
  }
  std::ostream& out = out_path.empty() ? std::cout : file;
  out.precision(10);
  if (episode) {
    export_episode(store.load_episode(*episode), format, out);
  } else {
    export_metrics(store, format, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridlens: multi-agent signal control workbench with explanation views"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  auto* train = app.add_subcommand("train", "Train and persist every episode to a run directory");
  train->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "New run directory")->required();
  train->add_option("--seed", seed, "Seed override (takes precedence over MARLENS_SEED)");

  std::string run_dir;
  auto* analyze = app.add_subcommand("analyze", "Precompute projections, trees and attributions");
  analyze->add_option("--run", run_dir, "Run directory")->required();

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  auto* serve = app.add_subcommand("serve", "Serve the JSON API for one run");
  serve->add_option("--run", run_dir, "Run directory")->required();
  serve->add_option("--port", port, "TCP port")->check(CLI::Range(1, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--static", static_dir, "Directory of UI assets to serve at /");

  std::optional<int> episode;
  std::string format = "csv";
  std::string out_path;
  auto* exp = app.add_subcommand("export", "Dump metric tables");
  exp->add_option("--run", run_dir, "Run directory")->required();
  exp->add_option("--episode", episode, "Episode index; omit for the per-episode metric table");
  exp->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  exp->add_option("--out", out_path, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(config_path, out_dir, seed);
    if (*analyze) return cmd_analyze(run_dir);
    if (*serve) return cmd_serve(run_dir, host, port, static_dir);
    if (*exp) return cmd_export(run_dir, episode, format, out_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
