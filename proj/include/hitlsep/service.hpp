#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hitlsep {

struct ServiceConfig {
  std::filesystem::path workspace;
  /// Required the first time a workspace is created; remembered afterwards.
  std::optional<std::filesystem::path> dataset_root;
  /// Seeds an empty model history with this checkpoint...
  std::optional<std::filesystem::path> initial_model;
  /// ...or with a freshly initialised network for this setup JSON.
  std::optional<std::filesystem::path> model_config;
  /// Static UI assets served under "/".
  std::optional<std::filesystem::path> static_dir;
  bool start_workers = true;
  unsigned separate_workers = 2;
};

enum class JobKind { Separate, Adapt, Evaluate };
enum class JobState { Queued, Running, Done, Failed };
std::string_view to_string(JobKind k);
std::string_view to_string(JobState s);

struct Job {
  std::string job_id;
  JobKind kind = JobKind::Separate;
  JobState state = JobState::Queued;
  double progress = 0.0;
  std::string result_ref;
  std::string error_message;
  std::vector<std::string> warnings;
  nlohmann::json params;
  std::string created_at;
};
nlohmann::json job_to_json(const Job& job);

/// HTTP front end plus job runner over a filesystem workspace:
///   workspace.json               dataset root
///   models/NNNN.ckpt, history.json  append-only checkpoints, parent links, active index
///   annotations/<song>.json      latest normalised set per song
///   estimates/<model>/<song>.wav vocal estimates per model
///   reports/<model>-<split>.json evaluation reports
///   jobs.json                    persisted job table
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the listener; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); blocking.
  void run();
  void stop();
  /// Blocks until no job is queued or running (test helper).
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// "host:port" or ":port" -> (host, port). Throws ValidationError.
std::pair<std::string, int> parse_listen_address(const std::string& addr);

}  // namespace hitlsep
