#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hitlsep/annotate.hpp"
#include "hitlsep/audio.hpp"
#include "hitlsep/data.hpp"
#include "hitlsep/eval.hpp"
#include "hitlsep/service.hpp"
#include "hitlsep/setup.hpp"

namespace hitlsep::service {

std::string now_iso();
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

struct ModelEntry {
  std::size_t id = 0;
  std::optional<std::size_t> parent;
  std::string created_at;
  std::string job_id;
  nlohmann::json note;
};

struct ActiveModel {
  std::size_t id = 0;
  std::shared_ptr<const Checkpoint> ckpt;
};

/// Filesystem state behind the service. Reads share the lock, writes take it exclusively.
class Workspace {
 public:
  explicit Workspace(const ServiceConfig& config);

  const std::filesystem::path& root() const { return root_; }
  const Dataset& dataset() const { return dataset_; }
  const SeparationSetup& setup() const { return setup_; }

  ActiveModel active() const;
  std::optional<std::size_t> previous_id() const;
  /// Appends and activates; the new entry's parent is the current active model.
  std::size_t append_model(const Checkpoint& ckpt, const std::string& job_id, const nlohmann::json& note);
  /// Activates the parent of the active model; nullopt when there is none.
  std::optional<std::size_t> rollback();
  std::vector<char> checkpoint_bytes(std::size_t id) const;
  nlohmann::json model_json() const;

  void put_annotations(const AnnotationSet& set);
  std::optional<AnnotationSet> annotations(const std::string& song_id) const;
  std::vector<AnnotationSet> all_annotations() const;

  std::filesystem::path estimate_path(std::size_t model, const std::string& song_id) const;
  bool has_estimate(std::size_t model, const std::string& song_id) const;
  void put_estimate(std::size_t model, const std::string& song_id, const AudioClip& clip);

  void put_report(std::size_t model, const std::string& split, const SplitReport& report);
  std::optional<nlohmann::json> report(std::size_t model, const std::string& split) const;

 private:
  std::filesystem::path model_path(std::size_t id) const;
  void save_history() const;
  void load_active();

  std::filesystem::path root_;
  Dataset dataset_;
  SeparationSetup setup_;
  mutable std::shared_mutex mutex_;
  std::vector<ModelEntry> history_;
  std::size_t active_id_ = 0;
  std::shared_ptr<const Checkpoint> active_;
};

}  // namespace hitlsep::service
