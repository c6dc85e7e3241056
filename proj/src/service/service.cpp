#include "hitlsep/service.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "hitlsep/adapt.hpp"
#include "hitlsep/error.hpp"
#include "hitlsep/separate.hpp"
#include "workspace.hpp"

namespace hitlsep {

namespace fs = std::filesystem;
using nlohmann::json;
using service::Workspace;

std::string_view to_string(JobKind k) {
  switch (k) {
    case JobKind::Separate: return "separate";
    case JobKind::Adapt: return "adapt";
    case JobKind::Evaluate: return "evaluate";
  }
  return "?";
}

std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "?";
}

namespace {

JobKind job_kind_from(const std::string& s) {
  if (s == "separate") return JobKind::Separate;
  if (s == "adapt") return JobKind::Adapt;
  if (s == "evaluate") return JobKind::Evaluate;
  throw ValidationError("unknown job kind '" + s + "'");
}

JobState job_state_from(const std::string& s) {
  if (s == "queued") return JobState::Queued;
  if (s == "running") return JobState::Running;
  if (s == "done") return JobState::Done;
  if (s == "failed") return JobState::Failed;
  throw ValidationError("unknown job state '" + s + "'");
}

Job job_from_json(const json& j) {
  Job job;
  job.job_id = j.at("job_id").get<std::string>();
  job.kind = job_kind_from(j.at("kind").get<std::string>());
  job.state = job_state_from(j.at("state").get<std::string>());
  job.progress = j.value("progress", 0.0);
  if (j.contains("result_ref") && j["result_ref"].is_string()) job.result_ref = j["result_ref"].get<std::string>();
  if (j.contains("error_message") && j["error_message"].is_string())
    job.error_message = j["error_message"].get<std::string>();
  job.warnings = j.value("warnings", std::vector<std::string>{});
  job.params = j.value("params", json::object());
  job.created_at = j.value("created_at", "");
  return job;
}

// Status carried by exceptions out of request handlers.
struct HttpError : Error {
  int status;
  HttpError(int s, const std::string& msg) : Error(msg), status(s) {}
};

struct Interrupted : Error {
  Interrupted() : Error("interrupted by service shutdown") {}
};

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw HttpError(422, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw HttpError(422, std::string("malformed JSON: ") + e.what());
  }
}

std::string query(const httplib::Request& req, const std::string& key, const std::string& fallback) {
  return req.has_param(key) ? req.get_param_value(key) : fallback;
}

json diagnostic_json(const SegmentDiagnostic& d) {
  json j{{"index", d.index},
         {"start_s", d.submitted.start_s},
         {"end_s", d.submitted.end_s},
         {"fate", std::string(to_string(d.fate))},
         {"reason", d.reason}};
  j["kept_index"] = d.kept_index ? json(*d.kept_index) : json(nullptr);
  return j;
}

}  // namespace

json job_to_json(const Job& job) {
  json j{{"job_id", job.job_id},
         {"kind", std::string(to_string(job.kind))},
         {"state", std::string(to_string(job.state))},
         {"progress", job.progress},
         {"warnings", job.warnings},
         {"params", job.params},
         {"created_at", job.created_at}};
  j["result_ref"] = job.result_ref.empty() ? json(nullptr) : json(job.result_ref);
  j["error_message"] = job.error_message.empty() ? json(nullptr) : json(job.error_message);
  return j;
}

std::pair<std::string, int> parse_listen_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ValidationError("listen address must be host:port, got '" + addr + "'");
  std::string host = addr.substr(0, colon);
  if (host.empty()) host = "127.0.0.1";
  const std::string port_s = addr.substr(colon + 1);
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(port_s, &used);
    if (used != port_s.size()) port = -1;
  } catch (const std::exception&) {
    port = -1;
  }
  if (port < 0 || port > 65535) throw ValidationError("bad port in listen address '" + addr + "'");
  return {host, port};
}

struct Service::Impl {
  ServiceConfig config;
  Workspace ws;
  httplib::Server server;

  std::mutex mu;
  std::condition_variable cv;
  std::condition_variable idle_cv;
  std::map<std::string, Job> jobs;
  std::uint64_t next_job = 1;
  std::deque<std::string> serial_queue;
  std::deque<std::string> separate_queue;
  std::size_t running = 0;
  bool stopping = false;
  std::vector<std::thread> workers;

  // Train songs are immutable; loaded once by the serial worker.
  std::optional<std::vector<SongAudio>> train_audio;
  std::optional<std::vector<SongSpectra>> train_spectra;

  explicit Impl(ServiceConfig c) : config(std::move(c)), ws(config) {
    load_jobs();
    routes();
    if (config.static_dir) server.set_mount_point("/", config.static_dir->string());
    if (config.start_workers) {
      workers.emplace_back([this] { worker(true); });
      for (unsigned i = 0; i < std::max(1u, config.separate_workers); ++i) workers.emplace_back([this] { worker(false); });
    }
  }

  ~Impl() { shutdown(); }

  void shutdown() {
    {
      std::lock_guard lock(mu);
      if (stopping) return;
      stopping = true;
    }
    cv.notify_all();
    server.stop();
    for (auto& t : workers)
      if (t.joinable()) t.join();
  }

  // ---- job table ----

  void persist_locked() {
    json list = json::array();
    for (const auto& [id, job] : jobs) list.push_back(job_to_json(job));
    service::write_json_atomic(ws.root() / "jobs.json", json{{"next_job", next_job}, {"jobs", list}});
  }

  void load_jobs() {
    const fs::path p = ws.root() / "jobs.json";
    if (!fs::exists(p)) return;
    const json j = service::read_json_file(p);
    next_job = j.value("next_job", std::uint64_t{1});
    for (const auto& e : j.at("jobs")) {
      Job job = job_from_json(e);
      if (job.state == JobState::Running) {
        job.state = JobState::Failed;
        job.error_message = "interrupted: service stopped while the job was running";
      }
      if (job.state == JobState::Queued) (job.kind == JobKind::Separate ? separate_queue : serial_queue).push_back(job.job_id);
      jobs[job.job_id] = std::move(job);
    }
    std::lock_guard lock(mu);
    persist_locked();
  }

  std::string enqueue_locked(JobKind kind, json params) {
    char id[32];
    std::snprintf(id, sizeof id, "job-%06llu", static_cast<unsigned long long>(next_job++));
    Job job;
    job.job_id = id;
    job.kind = kind;
    job.params = std::move(params);
    job.created_at = service::now_iso();
    jobs[job.job_id] = job;
    (kind == JobKind::Separate ? separate_queue : serial_queue).push_back(job.job_id);
    persist_locked();
    cv.notify_all();
    return job.job_id;
  }

  bool adapt_pending_locked() const {
    return std::any_of(jobs.begin(), jobs.end(), [](const auto& kv) {
      return kv.second.kind == JobKind::Adapt &&
             (kv.second.state == JobState::Queued || kv.second.state == JobState::Running);
    });
  }

  void set_progress(const std::string& id, double p) {
    std::lock_guard lock(mu);
    if (stopping) throw Interrupted();
    auto& job = jobs.at(id);
    job.progress = std::max(job.progress, std::clamp(p, 0.0, 1.0));
  }

  void worker(bool serial) {
    auto& queue = serial ? serial_queue : separate_queue;
    for (;;) {
      std::string id;
      Job snapshot;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        id = queue.front();
        queue.pop_front();
        auto& job = jobs.at(id);
        job.state = JobState::Running;
        ++running;
        persist_locked();
        snapshot = job;
      }
      Job result = snapshot;
      try {
        run_job(result);
        result.state = JobState::Done;
        result.progress = 1.0;
      } catch (const std::exception& e) {
        result.state = JobState::Failed;
        result.error_message = e.what();
        if (result.error_message.empty()) result.error_message = "job failed";
      }
      {
        std::lock_guard lock(mu);
        auto& job = jobs.at(id);
        job.state = result.state;
        job.result_ref = result.result_ref;
        job.error_message = result.error_message;
        job.warnings = result.warnings;
        if (result.state == JobState::Done) job.progress = 1.0;
        --running;
        persist_locked();
      }
      idle_cv.notify_all();
    }
  }

  // ---- job bodies ----

  void run_job(Job& job) {
    switch (job.kind) {
      case JobKind::Separate: return run_separate(job);
      case JobKind::Adapt: return run_adapt(job);
      case JobKind::Evaluate: return run_evaluate(job);
    }
  }

  const SongEntry& entry_or_throw(const std::string& song_id) const {
    const SongEntry* e = ws.dataset().find(song_id);
    if (!e) throw ValidationError("unknown song '" + song_id + "'");
    return *e;
  }

  static std::string estimate_ref(std::size_t model, const std::string& song) {
    return "/api/songs/" + song + "/audio?kind=estimate&model=" + std::to_string(model);
  }

  void run_separate(Job& job) {
    const auto song_id = job.params.at("song_id").get<std::string>();
    const auto model = ws.active();
    job.params["model_id"] = model.id;
    if (!ws.has_estimate(model.id, song_id)) {
      const auto& entry = entry_or_throw(song_id);
      AudioClip mix = mixdown(load_wav(entry.mixture_path));
      if (mix.sample_rate != ws.setup().sample_rate) mix = resample(mix, ws.setup().sample_rate);
      set_progress(job.job_id, 0.2);
      AudioClip est = separate(model.ckpt->net, ws.setup(), mix);
      set_progress(job.job_id, 0.9);
      ws.put_estimate(model.id, song_id, est);
    }
    job.result_ref = estimate_ref(model.id, song_id);
  }

  const std::vector<SongAudio>& train_songs() {
    if (!train_audio) {
      std::vector<SongAudio> songs;
      for (const auto& e : ws.dataset().train.entries)
        if (e.labeled()) songs.push_back(load_song(e, ws.setup().sample_rate));
      train_audio = std::move(songs);
    }
    return *train_audio;
  }

  const std::vector<SongSpectra>& train_analysed() {
    if (!train_spectra) {
      std::vector<SongSpectra> out;
      for (const auto& s : train_songs()) out.push_back(analyse_song(s, ws.setup()));
      train_spectra = std::move(out);
    }
    return *train_spectra;
  }

  void run_adapt(Job& job) {
    const AdaptConfig cfg = job.params.at("config").get<AdaptConfig>();
    const auto song_ids = job.params.at("song_ids").get<std::vector<std::string>>();
    const auto model = ws.active();
    job.params["parent_model"] = model.id;

    std::vector<AnnotationSet> sets;
    std::vector<SongAudio> hitl;
    for (const auto& id : song_ids) {
      auto set = ws.annotations(id);
      if (!set || set->segments.empty()) continue;
      hitl.push_back(load_song(entry_or_throw(id), ws.setup().sample_rate));
      sets.push_back(std::move(*set));
    }
    if (sets.empty()) {
      job.warnings.push_back("no annotated segments for the requested songs; model unchanged");
      job.result_ref = "model:" + std::to_string(model.id);
      return;
    }
    set_progress(job.job_id, 0.02);
    const auto& train = train_songs();
    const ExemplarStore store =
        build_exemplar_store(train_analysed(), ws.setup().net.input, cfg.exemplar_fraction, 8, cfg.seed);
    set_progress(job.job_id, 0.1);
    AdaptResult r = adapt(model.ckpt->net, ws.setup(), hitl, sets, train, store, cfg,
                          [&](double f) { set_progress(job.job_id, 0.1 + 0.85 * f); });
    job.warnings = r.warnings;
    if (r.batches.empty()) {
      job.warnings.push_back("adaptation produced no batches; model unchanged");
      job.result_ref = "model:" + std::to_string(model.id);
      return;
    }
    json note{{"config", cfg}, {"song_ids", song_ids}, {"batches", r.batches.size()}};
    if (!r.synthetic_pairs.empty()) note["synthetic_pairs"] = r.synthetic_pairs;
    const std::size_t id = ws.append_model(Checkpoint{ws.setup(), std::move(r.net), std::move(r.adam)}, job.job_id, note);
    job.result_ref = "model:" + std::to_string(id);
  }

  void run_evaluate(Job& job) {
    const auto split_name = job.params.at("split").get<std::string>();
    const auto& split = ws.dataset().split(split_from_string(split_name));
    const auto model = ws.active();
    job.params["model_id"] = model.id;
    std::vector<SongAudio> songs;
    const double n = static_cast<double>(split.entries.size());
    for (const auto& e : split.entries) {
      if (!e.labeled()) throw ValidationError("song '" + e.song_id + "' has no vocal stem; cannot evaluate");
      songs.push_back(load_song(e, ws.setup().sample_rate));
      set_progress(job.job_id, 0.3 * static_cast<double>(songs.size()) / n);
    }
    EvalOptions opts;
    opts.threads = 1;
    opts.progress = [&](std::size_t done, std::size_t total) {
      set_progress(job.job_id, 0.3 + 0.65 * static_cast<double>(done) / static_cast<double>(total));
    };
    const SplitReport report = evaluate_model(model.ckpt->net, ws.setup(), songs, opts);
    ws.put_report(model.id, split_name, report);
    job.result_ref = "/api/reports?model_id=" + std::to_string(model.id) + "&split=" + split_name;
  }

  // ---- routes ----

  template <typename F>
  auto guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_json(res, json{{"error", e.what()}}, e.status);
      } catch (const ValidationError& e) {
        send_json(res, json{{"error", e.what()}}, 422);
      } catch (const json::exception& e) {
        send_json(res, json{{"error", std::string("bad request: ") + e.what()}}, 422);
      } catch (const std::exception& e) {
        send_json(res, json{{"error", e.what()}}, 500);
      }
    };
  }

  const SongEntry& entry_or_404(const std::string& id) const {
    const SongEntry* e = ws.dataset().find(id);
    if (!e) throw HttpError(404, "unknown song '" + id + "'");
    return *e;
  }

  static std::string split_of(const Dataset& d, const std::string& id) {
    for (auto s : {SplitName::Train, SplitName::Hitl, SplitName::Test})
      if (d.split(s).find(id)) return std::string(to_string(s));
    return {};
  }

  AudioClip load_kind(const SongEntry& entry, const std::string& kind, std::size_t model) const {
    if (kind == "mixture") return mixdown(load_wav(entry.mixture_path));
    if (kind == "estimate") {
      if (!ws.has_estimate(model, entry.song_id))
        throw HttpError(404, "no estimate of '" + entry.song_id + "' for model " + std::to_string(model));
      return load_wav(ws.estimate_path(model, entry.song_id), AudioRole::Estimate);
    }
    throw HttpError(422, "kind must be mixture or estimate, got '" + kind + "'");
  }

  std::size_t model_param(const httplib::Request& req) const {
    const auto active = ws.active().id;
    if (!req.has_param("model")) return active;
    const auto v = req.get_param_value("model");
    try {
      std::size_t used = 0;
      const auto id = std::stoul(v, &used);
      if (used == v.size()) return id;
    } catch (const std::exception&) {
    }
    throw HttpError(422, "model must be a model id, got '" + v + "'");
  }

  void routes() {
    server.Get("/api/songs", guarded([this](const httplib::Request&, httplib::Response& res) {
      const auto active = ws.active().id;
      json out = json::array();
      for (auto s : {SplitName::Train, SplitName::Hitl, SplitName::Test}) {
        for (const auto& e : ws.dataset().split(s).entries) {
          const auto ann = ws.annotations(e.song_id);
          out.push_back({{"song_id", e.song_id},
                         {"split", std::string(to_string(s))},
                         {"duration_s", e.duration_s},
                         {"genre", e.genre},
                         {"has_estimate", ws.has_estimate(active, e.song_id)},
                         {"annotated_segments", ann ? ann->segments.size() : 0}});
        }
      }
      send_json(res, out);
    }));

    server.Post("/api/separate", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      if (!body.contains("song_id") || !body["song_id"].is_string()) throw HttpError(422, "'song_id' must be a string");
      const auto id = body["song_id"].get<std::string>();
      entry_or_404(id);
      std::lock_guard lock(mu);
      send_json(res, json{{"job_id", enqueue_locked(JobKind::Separate, json{{"song_id", id}})}}, 202);
    }));

    server.Get("/api/songs/:id/audio", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& entry = entry_or_404(req.path_params.at("id"));
      const auto kind = query(req, "kind", "mixture");
      const auto model = model_param(req);
      fs::path p;
      if (kind == "mixture") {
        p = entry.mixture_path;
      } else if (kind == "estimate") {
        if (!ws.has_estimate(model, entry.song_id))
          throw HttpError(404, "no estimate of '" + entry.song_id + "' for model " + std::to_string(model));
        p = ws.estimate_path(model, entry.song_id);
      } else {
        throw HttpError(422, "kind must be mixture or estimate, got '" + kind + "'");
      }
      std::ifstream in(p, std::ios::binary);
      if (!in) throw HttpError(404, "audio not found");
      std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
      res.set_content(std::move(bytes), "audio/wav");
    }));

    server.Get("/api/songs/:id/peaks", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& entry = entry_or_404(req.path_params.at("id"));
      const auto kind = query(req, "kind", "mixture");
      const auto model = model_param(req);
      double px_per_s = 0;
      try {
        px_per_s = std::stod(query(req, "px_per_s", "100"));
      } catch (const std::exception&) {
        px_per_s = -1;
      }
      const AudioClip clip = load_kind(entry, kind, model);
      if (!(px_per_s > 0) || px_per_s > clip.sample_rate)
        throw HttpError(422, "px_per_s must be in (0, sample_rate]");
      const double per_px = clip.sample_rate / px_per_s;
      const std::size_t n = clip.length();
      const auto cols = static_cast<std::size_t>(std::ceil(static_cast<double>(n) / per_px - 1e-9));
      json peaks = json::array();
      for (std::size_t c = 0; c < cols; ++c) {
        const auto a = static_cast<std::size_t>(std::floor(c * per_px));
        const auto b = std::min(n, std::max(a + 1, static_cast<std::size_t>(std::floor((c + 1) * per_px))));
        double lo = clip.samples[a], hi = clip.samples[a];
        for (std::size_t i = a; i < b; ++i) {
          lo = std::min(lo, clip.samples[i]);
          hi = std::max(hi, clip.samples[i]);
        }
        peaks.push_back({lo, hi});
      }
      send_json(res, json{{"song_id", entry.song_id},
                          {"kind", kind},
                          {"sample_rate", clip.sample_rate},
                          {"px_per_s", px_per_s},
                          {"duration_s", clip.duration_seconds()},
                          {"peaks", peaks}});
    }));

    server.Post("/api/annotations", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const AnnotationSet raw = annotation_from_json(body);
      const auto& entry = entry_or_404(raw.song_id);
      if (split_of(ws.dataset(), raw.song_id) == "test")
        throw HttpError(422, "song '" + raw.song_id + "' is in the test split and cannot be annotated");
      NormalizeResult r = normalize_with_diagnostics(raw, entry.duration_s);
      if (r.set.created_at.empty()) r.set.created_at = service::now_iso();
      ws.put_annotations(r.set);
      json diags = json::array();
      std::size_t kept = 0, dropped = 0, rejected = 0;
      for (const auto& d : r.diagnostics) {
        diags.push_back(diagnostic_json(d));
        (d.fate == SegmentFate::Kept ? kept : d.fate == SegmentFate::Dropped ? dropped : rejected)++;
      }
      send_json(res, json{{"set", annotation_to_json(r.set)},
                          {"diagnostics", diags},
                          {"counts",
                           {{"submitted", r.diagnostics.size()},
                            {"kept", kept},
                            {"dropped", dropped},
                            {"rejected", rejected}}}});
    }));

    server.Get("/api/annotations/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& entry = entry_or_404(req.path_params.at("id"));
      const auto set = ws.annotations(entry.song_id);
      if (!set) throw HttpError(404, "no annotations for '" + entry.song_id + "'");
      send_json(res, annotation_to_json(*set));
    }));

    server.Post("/api/adapt", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json body = parse_body(req);
      json cfg_json;
      if (body.contains("config")) {
        cfg_json = body["config"];
      } else {
        cfg_json = body;
        cfg_json.erase("song_ids");
      }
      if (!cfg_json.is_object() || !cfg_json.contains("method")) throw HttpError(422, "adapt config needs 'method'");
      AdaptConfig cfg = cfg_json.get<AdaptConfig>();
      cfg.validate();
      std::vector<std::string> ids;
      if (body.contains("song_ids")) {
        ids = body["song_ids"].get<std::vector<std::string>>();
        for (const auto& id : ids) {
          entry_or_404(id);
          if (split_of(ws.dataset(), id) == "test") throw HttpError(422, "song '" + id + "' is in the test split");
        }
      } else {
        for (const auto& set : ws.all_annotations())
          if (split_of(ws.dataset(), set.song_id) != "test") ids.push_back(set.song_id);
      }
      std::lock_guard lock(mu);
      if (adapt_pending_locked()) throw HttpError(409, "an adapt job is already queued or running");
      send_json(res, json{{"job_id", enqueue_locked(JobKind::Adapt, json{{"config", cfg}, {"song_ids", ids}})}}, 202);
    }));

    server.Get("/api/jobs", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mu);
      json out = json::array();
      for (const auto& [id, job] : jobs) out.push_back(job_to_json(job));
      send_json(res, out);
    }));

    server.Get("/api/jobs/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu);
      const auto it = jobs.find(req.path_params.at("id"));
      if (it == jobs.end()) throw HttpError(404, "unknown job '" + req.path_params.at("id") + "'");
      send_json(res, job_to_json(it->second));
    }));

    server.Post("/api/evaluate", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const auto name = body.value("split", std::string("test"));
      const auto& split = ws.dataset().split(split_from_string(name));
      if (split.entries.empty()) throw HttpError(422, "no songs in split '" + name + "'");
      for (const auto& e : split.entries)
        if (!e.labeled()) throw HttpError(422, "song '" + e.song_id + "' has no vocal stem");
      std::lock_guard lock(mu);
      send_json(res, json{{"job_id", enqueue_locked(JobKind::Evaluate, json{{"split", name}})}}, 202);
    }));

    server.Get("/api/reports", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto which = query(req, "model", "current");
      const auto split = query(req, "split", "test");
      (void)split_from_string(split);
      std::size_t id = 0;
      if (req.has_param("model_id")) {
        id = std::stoul(req.get_param_value("model_id"));
      } else if (which == "current") {
        id = ws.active().id;
      } else if (which == "previous") {
        const auto prev = ws.previous_id();
        if (!prev) throw HttpError(404, "the active model has no previous model");
        id = *prev;
      } else {
        throw HttpError(422, "model must be current or previous, got '" + which + "'");
      }
      const auto rep = ws.report(id, split);
      if (!rep) throw HttpError(404, "no " + split + " report for model " + std::to_string(id));
      send_json(res, *rep);
    }));

    server.Get("/api/model", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, ws.model_json());
    }));

    server.Get("/api/model/checkpoint", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = model_param(req);
      const auto bytes = ws.checkpoint_bytes(id);
      res.set_content(std::string(bytes.begin(), bytes.end()), "application/octet-stream");
    }));

    server.Post("/api/model/rollback", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mu);
      if (adapt_pending_locked()) throw HttpError(409, "an adapt job is queued or running");
      const auto id = ws.rollback();
      if (!id) throw HttpError(409, "the active model has no previous checkpoint");
      send_json(res, ws.model_json());
    }));
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() = default;

int Service::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Service::run() { impl_->server.listen_after_bind(); }

void Service::stop() { impl_->shutdown(); }

void Service::wait_idle() {
  std::unique_lock lock(impl_->mu);
  impl_->idle_cv.wait(lock, [&] {
    return impl_->stopping || (impl_->running == 0 && impl_->serial_queue.empty() && impl_->separate_queue.empty());
  });
}

}  // namespace hitlsep
