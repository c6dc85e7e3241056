#include "workspace.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <mutex>

#include "hitlsep/error.hpp"

namespace hitlsep::service {

namespace fs = std::filesystem;
using nlohmann::json;

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json_atomic(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

namespace {

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<char>& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

json entry_json(const ModelEntry& e) {
  json j{{"id", e.id}, {"created_at", e.created_at}, {"job_id", e.job_id}, {"note", e.note}};
  j["parent"] = e.parent ? json(*e.parent) : json(nullptr);
  return j;
}

bool safe_name(const std::string& s) {
  if (s.empty() || s == "." || s == "..") return false;
  for (char c : s)
    if (c == '/' || c == '\\' || c == '\0') return false;
  return true;
}

}  // namespace

Workspace::Workspace(const ServiceConfig& config) : root_(config.workspace) {
  if (root_.empty()) throw ValidationError("workspace path is empty");
  for (const char* sub : {"models", "annotations", "estimates", "reports"}) fs::create_directories(root_ / sub);

  const fs::path meta = root_ / "workspace.json";
  fs::path data_root;
  if (config.dataset_root) {
    data_root = fs::absolute(*config.dataset_root);
    write_json_atomic(meta, json{{"dataset_root", data_root.string()}});
  } else if (fs::exists(meta)) {
    data_root = read_json_file(meta).at("dataset_root").get<std::string>();
  } else {
    throw ValidationError("workspace " + root_.string() + " has no dataset root; pass one");
  }
  dataset_ = load_dataset(data_root);

  const fs::path hist = root_ / "models" / "history.json";
  if (fs::exists(hist)) {
    const json j = read_json_file(hist);
    for (const auto& e : j.at("entries")) {
      ModelEntry m;
      m.id = e.at("id").get<std::size_t>();
      if (!e.at("parent").is_null()) m.parent = e.at("parent").get<std::size_t>();
      m.created_at = e.value("created_at", "");
      m.job_id = e.value("job_id", "");
      m.note = e.value("note", json::object());
      history_.push_back(std::move(m));
    }
    active_id_ = j.at("active").get<std::size_t>();
    if (history_.empty() || active_id_ >= history_.size())
      throw ValidationError(hist.string() + ": active model " + std::to_string(active_id_) + " not in history");
  } else {
    if (config.initial_model) {
      (void)load_checkpoint(*config.initial_model);
      write_bytes(model_path(0), read_bytes(*config.initial_model));
    } else if (config.model_config) {
      Checkpoint c{load_setup(*config.model_config), {}, {}};
      c.net = init(c.setup.net);
      std::vector<std::size_t> sizes;
      for (const auto& p : c.net.params) sizes.push_back(p.size());
      c.adam = AdamState::for_sizes(sizes, 1e-4);
      save_checkpoint(c, model_path(0));
    } else {
      throw ValidationError("workspace " + root_.string() + " has no model; pass an initial checkpoint or model config");
    }
    history_.push_back(ModelEntry{0, std::nullopt, now_iso(), "", json{{"origin", "initial"}}});
    active_id_ = 0;
    save_history();
  }
  load_active();
  setup_ = active_->setup;
}

fs::path Workspace::model_path(std::size_t id) const {
  char name[32];
  std::snprintf(name, sizeof name, "%04zu.ckpt", id);
  return root_ / "models" / name;
}

void Workspace::save_history() const {
  json entries = json::array();
  for (const auto& e : history_) entries.push_back(entry_json(e));
  write_json_atomic(root_ / "models" / "history.json", json{{"active", active_id_}, {"entries", entries}});
}

void Workspace::load_active() {
  active_ = std::make_shared<const Checkpoint>(load_checkpoint(model_path(active_id_)));
}

ActiveModel Workspace::active() const {
  std::shared_lock lock(mutex_);
  return {active_id_, active_};
}

std::optional<std::size_t> Workspace::previous_id() const {
  std::shared_lock lock(mutex_);
  return history_[active_id_].parent;
}

std::size_t Workspace::append_model(const Checkpoint& ckpt, const std::string& job_id, const json& note) {
  if (!(ckpt.setup == setup_)) throw ValidationError("checkpoint setup differs from the workspace model");
  std::unique_lock lock(mutex_);
  const std::size_t id = history_.size();
  write_bytes(model_path(id), encode_checkpoint(ckpt));
  history_.push_back(ModelEntry{id, active_id_, now_iso(), job_id, note});
  const std::size_t before = active_id_;
  active_id_ = id;
  try {
    save_history();
    load_active();
  } catch (...) {
    history_.pop_back();
    active_id_ = before;
    throw;
  }
  return id;
}

std::optional<std::size_t> Workspace::rollback() {
  std::unique_lock lock(mutex_);
  const auto parent = history_[active_id_].parent;
  if (!parent) return std::nullopt;
  active_id_ = *parent;
  save_history();
  load_active();
  return active_id_;
}

std::vector<char> Workspace::checkpoint_bytes(std::size_t id) const {
  std::shared_lock lock(mutex_);
  if (id >= history_.size()) throw ValidationError("unknown model " + std::to_string(id));
  return read_bytes(model_path(id));
}

json Workspace::model_json() const {
  std::shared_lock lock(mutex_);
  json entries = json::array();
  for (const auto& e : history_) entries.push_back(entry_json(e));
  json j{{"active", active_id_}, {"history", entries}, {"setup", setup_}};
  j["previous"] = history_[active_id_].parent ? json(*history_[active_id_].parent) : json(nullptr);
  return j;
}

void Workspace::put_annotations(const AnnotationSet& set) {
  if (!safe_name(set.song_id)) throw ValidationError("bad song_id '" + set.song_id + "'");
  std::unique_lock lock(mutex_);
  const fs::path p = root_ / "annotations" / (set.song_id + ".json");
  write_json_atomic(p, annotation_to_json(set));
}

std::optional<AnnotationSet> Workspace::annotations(const std::string& song_id) const {
  if (!safe_name(song_id)) return std::nullopt;
  std::shared_lock lock(mutex_);
  const fs::path p = root_ / "annotations" / (song_id + ".json");
  if (!fs::exists(p)) return std::nullopt;
  return load_annotations(p);
}

std::vector<AnnotationSet> Workspace::all_annotations() const {
  std::shared_lock lock(mutex_);
  std::vector<AnnotationSet> out;
  for (const auto& e : fs::directory_iterator(root_ / "annotations"))
    if (e.path().extension() == ".json") out.push_back(load_annotations(e.path()));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.song_id < b.song_id; });
  return out;
}

fs::path Workspace::estimate_path(std::size_t model, const std::string& song_id) const {
  return root_ / "estimates" / std::to_string(model) / (song_id + ".wav");
}

bool Workspace::has_estimate(std::size_t model, const std::string& song_id) const {
  if (!safe_name(song_id)) return false;
  std::shared_lock lock(mutex_);
  return fs::exists(estimate_path(model, song_id));
}

void Workspace::put_estimate(std::size_t model, const std::string& song_id, const AudioClip& clip) {
  if (!safe_name(song_id)) throw ValidationError("bad song_id '" + song_id + "'");
  const auto bytes = encode_wav(clip);
  std::unique_lock lock(mutex_);
  const fs::path p = estimate_path(model, song_id);
  fs::create_directories(p.parent_path());
  write_bytes(p, bytes);
}

void Workspace::put_report(std::size_t model, const std::string& split, const SplitReport& report) {
  json j = report_to_json(report);
  j["model_id"] = model;
  j["split"] = split;
  std::unique_lock lock(mutex_);
  write_json_atomic(root_ / "reports" / (std::to_string(model) + "-" + split + ".json"), j);
}

std::optional<json> Workspace::report(std::size_t model, const std::string& split) const {
  std::shared_lock lock(mutex_);
  const fs::path p = root_ / "reports" / (std::to_string(model) + "-" + split + ".json");
  if (!fs::exists(p)) return std::nullopt;
  return read_json_file(p);
}

}  // namespace hitlsep::service
