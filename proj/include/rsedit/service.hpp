// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

// resolv.h (pulled in by httplib) defines _res, which clashes with Eigen internals.
#include <Eigen/Dense>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rsedit/checkpoint.hpp"
#include "rsedit/digest.hpp"
#include "rsedit/edit.hpp"
#include "rsedit/error.hpp"
#include "rsedit/eval.hpp"
#include "rsedit/image_io.hpp"
#include "rsedit/trainer.hpp"

namespace rsedit::service {

namespace fs = std::filesystem;

enum class JobState { Queued, Running, Done, Failed };
enum class JobKind { Train, Edit, Score };

inline std::string to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "QUEUED";
    case JobState::Running: return "RUNNING";
    case JobState::Done: return "DONE";
    case JobState::Failed: return "FAILED";
  }
  return "FAILED";
}

inline JobState parse_job_state(const std::string& s) {
  if (s == "QUEUED") return JobState::Queued;
  if (s == "RUNNING") return JobState::Running;
  if (s == "DONE") return JobState::Done;
  if (s == "FAILED") return JobState::Failed;
  throw ParseError("unknown job state '" + s + "'");
}

inline std::string to_string(JobKind k) {
  switch (k) {
    case JobKind::Train: return "train";
    case JobKind::Edit: return "edit";
    case JobKind::Score: return "score";
  }
  return "edit";
}

inline JobKind parse_job_kind(const std::string& s) {
  if (s == "train") return JobKind::Train;
  if (s == "edit") return JobKind::Edit;
  if (s == "score") return JobKind::Score;
  throw ParseError("unknown job kind '" + s + "'");
}

inline std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

struct Job {
  std::string id;
  JobKind kind = JobKind::Edit;
  nlohmann::json request;
  JobState state = JobState::Queued;
  double progress = 0.0;
  std::string result;  ///< artifact path relative to the data directory
  nlohmann::json error;
  std::int64_t created_ms = 0;
  std::int64_t updated_ms = 0;
  std::uint64_t sequence = 0;  ///< submission order
};

inline nlohmann::json job_json(const Job& j) {
  nlohmann::json out = {{"id", j.id},
                        {"kind", to_string(j.kind)},
                        {"state", to_string(j.state)},
                        {"progress", j.progress},
                        {"request", j.request},
                        {"created_ms", j.created_ms},
                        {"updated_ms", j.updated_ms},
                        {"sequence", j.sequence}};
  out["result"] = j.result.empty() ? nlohmann::json() : nlohmann::json(j.result);
  out["error"] = j.error;
  return out;
}

inline Job job_from_json(const nlohmann::json& j) {
  Job job;
  job.id = j.at("id").get<std::string>();
  job.kind = parse_job_kind(j.at("kind").get<std::string>());
  job.request = j.value("request", nlohmann::json::object());
  job.state = parse_job_state(j.at("state").get<std::string>());
  job.progress = j.value("progress", 0.0);
  if (j.contains("result") && j.at("result").is_string()) job.result = j.at("result").get<std::string>();
  job.error = j.value("error", nlohmann::json());
  job.created_ms = j.value("created_ms", std::int64_t{0});
  job.updated_ms = j.value("updated_ms", std::int64_t{0});
  job.sequence = j.value("sequence", std::uint64_t{0});
  return job;
}

/// Jobs kept in memory and mirrored to one JSON file per job.
class JobStore {
 public:
  explicit JobStore(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    for (const auto& entry : fs::directory_iterator(dir_)) {
      if (entry.path().extension() != ".json") continue;
      std::ifstream in(entry.path());
      try {
        Job job = job_from_json(nlohmann::json::parse(in));
        next_sequence_ = std::max(next_sequence_, job.sequence + 1);
        jobs_[job.id] = std::move(job);
      } catch (const std::exception&) {
        // Unreadable records are skipped; they are left on disk for inspection.
      }
    }
  }

  std::vector<Job> all() const {
    std::lock_guard lock(mutex_);
    std::vector<Job> out;
    for (const auto& [id, job] : jobs_) out.push_back(job);
    std::sort(out.begin(), out.end(), [](const Job& a, const Job& b) { return a.sequence < b.sequence; });
    return out;
  }

  std::optional<Job> get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  Job insert(Job job) {
    std::lock_guard lock(mutex_);
    job.sequence = next_sequence_++;
    job.created_ms = job.updated_ms = now_ms();
    jobs_[job.id] = job;
    persist(job);
    return job;
  }

  /// Applies `fn` under the lock and persists the result. Returns false for an unknown id.
  template <typename Fn>
  bool update(const std::string& id, Fn&& fn) {
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return false;
    fn(it->second);
    it->second.updated_ms = now_ms();
    persist(it->second);
    return true;
  }

 private:
  void persist(const Job& job) const {
    const fs::path path = dir_ / (job.id + ".json");
    const fs::path tmp = dir_ / (job.id + ".json.tmp");
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << job_json(job).dump(2);
    }
    fs::rename(tmp, path);
  }

  fs::path dir_;
  mutable std::mutex mutex_;
  std::map<std::string, Job> jobs_;
  std::uint64_t next_sequence_ = 0;
};

namespace detail {

/// Config from defaults with the fields present under `key` patched over them.
template <typename Config>
Config overlay(const nlohmann::json& request, const std::string& key) {
  nlohmann::json j = Config{};
  if (request.contains(key)) j.merge_patch(request.at(key));
  return j.get<Config>();
}

}  // namespace detail

struct ServiceConfig {
  fs::path data_dir = "rsedit-data";
  int workers = 1;
  std::string llm_url;  ///< default chat endpoint for /variants and PE edits
};

/// Request problem reported as HTTP 400 (validation) or 404 (missing resource).
class RequestError : public Error {
 public:
  RequestError(int status, std::vector<FieldError> fields)
      : Error(status == 404 ? "not-found" : "invalid-request", fields.empty() ? "" : fields.front().message),
        status_(status),
        fields_(std::move(fields)) {}
  int status() const { return status_; }
  const std::vector<FieldError>& fields() const { return fields_; }

 private:
  int status_;
  std::vector<FieldError> fields_;
};

enum class CancelOutcome { NotFound, AlreadyFinished, Cancelled };

/// Asynchronous train/edit/score jobs executed by a fixed pool of workers,
/// one job per worker at a time, in submission order.
class JobManager {
 public:
  explicit JobManager(ServiceConfig config) : config_(std::move(config)), store_(config_.data_dir / "jobs") {
    if (config_.workers < 1) throw InvalidConfig("service needs at least one worker");
    for (const char* sub : {"checkpoints", "uploads", "masks", "results"}) fs::create_directories(config_.data_dir / sub);
    for (const Job& job : store_.all()) {
      if (job.state == JobState::Running) {
        store_.update(job.id, [](Job& j) {
          j.state = JobState::Failed;
          j.error = {{"error", "interrupted"}, {"message", "interrupted"}};
        });
      } else if (job.state == JobState::Queued) {
        queue_.push_back(job.id);
      }
    }
    for (int i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  ~JobManager() { shutdown(); }

  void shutdown() {
    {
      std::lock_guard lock(mutex_);
      if (stopping_) return;
      stopping_ = true;
      for (auto& [id, flag] : cancel_flags_) *flag = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) {
      if (w.joinable()) w.join();
    }
  }

  const ServiceConfig& config() const { return config_; }
  JobStore& store() { return store_; }

  fs::path checkpoint_path(const std::string& name) const {
    std::string file = name;
    if (file.size() < 3 || file.substr(file.size() - 3) != ".ck") file += ".ck";
    return config_.data_dir / "checkpoints" / file;
  }

  static bool valid_name(const std::string& name) {
    if (name.empty() || name.size() > 128) return false;
    return std::all_of(name.begin(), name.end(), [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    }) && name.find("..") == std::string::npos;
  }

  /// Stores bytes under a content hash and returns the path.
  fs::path store_blob(const std::string& subdir, const std::string& bytes, const std::string& ext) {
    const std::string name = digest_bytes({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()}) + ext;
    const fs::path path = config_.data_dir / subdir / name;
    if (!fs::exists(path)) {
      const fs::path tmp = path.string() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
      {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      }
      fs::rename(tmp, path);
    }
    return path;
  }

  std::string submit(JobKind kind, nlohmann::json request) {
    Job job;
    job.id = new_id();
    job.kind = kind;
    job.request = std::move(request);
    job = store_.insert(std::move(job));
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(job.id);
    }
    cv_.notify_one();
    return job.id;
  }

  std::optional<Job> get(const std::string& id) const { return store_.get(id); }

  CancelOutcome cancel(const std::string& id) {
    std::lock_guard lock(mutex_);
    const auto job = store_.get(id);
    if (!job) return CancelOutcome::NotFound;
    if (job->state == JobState::Done || job->state == JobState::Failed) return CancelOutcome::AlreadyFinished;
    if (job->state == JobState::Queued) {
      queue_.erase(std::remove(queue_.begin(), queue_.end(), id), queue_.end());
      store_.update(id, [](Job& j) { mark_cancelled(j); });
      return CancelOutcome::Cancelled;
    }
    // Running: the worker notices the flag at its next progress report.
    if (const auto it = cancel_flags_.find(id); it != cancel_flags_.end()) *it->second = true;
    store_.update(id, [](Job& j) { mark_cancelled(j); });
    return CancelOutcome::Cancelled;
  }

  /// Blocks until the job leaves QUEUED/RUNNING or the timeout expires.
  std::optional<Job> wait(const std::string& id, std::chrono::milliseconds timeout) const {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      auto job = store_.get(id);
      if (!job || job->state == JobState::Done || job->state == JobState::Failed) return job;
      if (std::chrono::steady_clock::now() >= deadline) return job;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }

 private:
  static void mark_cancelled(Job& j) {
    j.state = JobState::Failed;
    j.error = {{"error", "cancelled"}, {"message", "cancelled"}};
  }

  std::string new_id() {
    std::lock_guard lock(mutex_);
    std::uniform_int_distribution<std::uint64_t> dist;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(dist(id_rng_)));
    return buf;
  }

  void worker_loop() {
    while (true) {
      std::string id;
      std::shared_ptr<std::atomic<bool>> flag;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        id = queue_.front();
        queue_.pop_front();
        flag = std::make_shared<std::atomic<bool>>(false);
        cancel_flags_[id] = flag;
        store_.update(id, [](Job& j) {
          j.state = JobState::Running;
          j.progress = 0.0;
        });
      }
      execute(id, *flag);
      std::lock_guard lock(mutex_);
      cancel_flags_.erase(id);
    }
  }

  void report(const std::string& id, double fraction, const std::atomic<bool>& cancelled) {
    if (cancelled) throw Cancelled();
    store_.update(id, [fraction](Job& j) {
      if (j.state == JobState::Running) j.progress = std::clamp(std::max(j.progress, fraction), 0.0, 1.0);
    });
  }

  void finish(const std::string& id, const std::string& result) {
    store_.update(id, [&](Job& j) {
      if (j.state != JobState::Running) return;  // cancelled meanwhile
      j.state = JobState::Done;
      j.progress = 1.0;
      j.result = result;
    });
  }

  void fail(const std::string& id, nlohmann::json error) {
    store_.update(id, [&](Job& j) {
      if (j.state != JobState::Running) return;
      j.state = JobState::Failed;
      j.error = std::move(error);
    });
  }

  void execute(const std::string& id, const std::atomic<bool>& cancelled) {
    const auto job = store_.get(id);
    if (!job) return;
    try {
      switch (job->kind) {
        case JobKind::Train: run_train(*job, cancelled); break;
        case JobKind::Edit: run_edit_job(*job, cancelled); break;
        case JobKind::Score: run_score(*job, cancelled); break;
      }
    } catch (const Cancelled&) {
      // already marked FAILED/cancelled by cancel()
    } catch (const Error& e) {
      fail(id, {{"error", e.kind()}, {"message", e.what()}});
    } catch (const std::exception& e) {
      fail(id, {{"error", "internal"}, {"message", e.what()}});
    }
  }

  void run_train(const Job& job, const std::atomic<bool>& cancelled) {
    const auto& r = job.request;
    const ModelConfig model = detail::overlay<ModelConfig>(r, "model");
    TrainConfig train = detail::overlay<TrainConfig>(r, "train");
    const std::string name = r.at("name").get<std::string>();
    train.checkpoint_path = checkpoint_path(name).string();
    const Image<float> image = load_rgb(r.at("image").get<std::string>());
    rsedit::train(image, model, train, [&](std::uint64_t step, int total, double) {
      report(job.id, static_cast<double>(step) / std::max(1, total), cancelled);
    });
    finish(job.id, fs::relative(checkpoint_path(name), config_.data_dir).string());
  }

  void run_edit_job(const Job& job, const std::atomic<bool>& cancelled) {
    EditRequest request = job.request.get<EditRequest>();
    request.checkpoint = checkpoint_path(request.checkpoint).string();
    const fs::path out = config_.data_dir / "results" / (job.id + ".png");
    EditOptions options;
    options.progress = [&](double f) { report(job.id, f, cancelled); };
    options.warn = [](const std::string&) {};
    const EditResult result = run_edit(request, options);
    save_rgb(out, result.image);
    finish(job.id, fs::relative(out, config_.data_dir).string());
  }

  void run_score(const Job& job, const std::atomic<bool>& cancelled) {
    const auto& r = job.request;
    const auto embedder = make_embedder(r.value("embedder", std::string("mock")));
    const double omega = r.value("omega", 1.0);
    const std::string prompt = r.at("prompt").get<std::string>();
    const std::string image = r.at("image").get<std::string>();
    report(job.id, 0.0, cancelled);
    ScoreReport report_out{embedder->id(), omega, {}};
    report_out.records.push_back({image, prompt, clip_score(load_rgb(image).cast<double>(), prompt, *embedder, omega)});
    const fs::path out = config_.data_dir / "results" / (job.id + ".jsonl");
    write_score_report(report_out, out);
    finish(job.id, fs::relative(out, config_.data_dir).string());
  }

  ServiceConfig config_;
  JobStore store_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::string> queue_;
  std::map<std::string, std::shared_ptr<std::atomic<bool>>> cancel_flags_;
  std::vector<std::thread> workers_;
  std::mt19937_64 id_rng_{std::random_device{}()};
  bool stopping_ = false;
};

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline nlohmann::json fields_json(const std::vector<FieldError>& fields) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : fields) arr.push_back({{"field", f.field}, {"message", f.message}});
  return arr;
}

inline void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message,
                       const std::vector<FieldError>& fields = {}) {
  nlohmann::json body = {{"error", kind}, {"message", message}};
  if (!fields.empty()) body["fields"] = fields_json(fields);
  send_json(res, status, body);
}

[[noreturn]] inline void bad_request(const std::string& field, const std::string& message) {
  throw RequestError(400, {{field, message}});
}

/// Request JSON from the `request` multipart field or from the raw body.
inline nlohmann::json request_json(const httplib::Request& req) {
  std::string text;
  if (req.is_multipart_form_data()) {
    if (!req.has_file("request")) return nlohmann::json::object();
    text = req.get_file_value("request").content;
  } else {
    text = req.body;
  }
  if (text.empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(text);
    if (!j.is_object()) bad_request("request", "request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    bad_request("request", std::string("malformed JSON: ") + e.what());
  }
}

inline std::optional<std::string> upload(const httplib::Request& req, const std::string& field) {
  if (!req.is_multipart_form_data() || !req.has_file(field)) return std::nullopt;
  return req.get_file_value(field).content;
}

inline std::vector<std::uint8_t> as_bytes(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace detail

/// HTTP front end of the job manager. Every response body is JSON, except
/// artifact downloads of DONE jobs.
class Server {
 public:
  explicit Server(ServiceConfig config) : jobs_(std::move(config)) { routes(); }
  ~Server() { stop(); }

  /// Binds and serves on a background thread. Port 0 picks a free port; the bound port is returned.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    if (port == 0) {
      port_ = http_.bind_to_any_port(host);
    } else {
      if (!http_.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
      port_ = port;
    }
    if (port_ <= 0) throw IoError("cannot bind " + host);
    thread_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port) {
    if (!http_.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    http_.stop();
    if (thread_.joinable()) thread_.join();
    jobs_.shutdown();
  }

  int port() const { return port_; }
  JobManager& jobs() { return jobs_; }

 private:
  void routes() {
    http_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const RequestError& e) {
        detail::send_error(res, e.status(), e.kind(), e.what(), e.fields());
      } catch (const Error& e) {
        detail::send_error(res, 400, e.kind(), e.what());
      } catch (const std::exception& e) {
        detail::send_error(res, 500, "internal", e.what());
      }
    });
    http_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        detail::send_error(res, res.status, res.status == 404 ? "not-found" : "http-error",
                           httplib::status_message(res.status));
      }
    });

    http_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      detail::send_json(res, 200, {{"status", "ok"}, {"workers", jobs_.config().workers}});
    });

    http_.Get("/checkpoints", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json list = nlohmann::json::array();
      std::vector<fs::path> paths;
      for (const auto& e : fs::directory_iterator(jobs_.config().data_dir / "checkpoints")) {
        if (e.path().extension() == ".ck") paths.push_back(e.path());
      }
      std::sort(paths.begin(), paths.end());
      for (const auto& p : paths) list.push_back({{"name", p.stem().string()}, {"bytes", fs::file_size(p)}});
      detail::send_json(res, 200, {{"checkpoints", list}});
    });

    http_.Post("/jobs/train", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json r = detail::request_json(req);
      const std::string name = r.value("name", std::string());
      if (!JobManager::valid_name(name)) detail::bad_request("name", "checkpoint name must be [A-Za-z0-9._-]+");
      const auto image = detail::upload(req, "image");
      if (!image) detail::bad_request("image", "a training image upload is required");
      try {
        decode_rgb(detail::as_bytes(*image));
        const auto model = detail::overlay<ModelConfig>(r, "model");
        const auto train = detail::overlay<TrainConfig>(r, "train");
        model.denoiser.validate();
        train.validate();
      } catch (const nlohmann::json::exception& e) {
        detail::bad_request("request", e.what());
      } catch (const Error& e) {
        detail::bad_request(dynamic_cast<const ParseError*>(&e) ? "image" : "request", e.what());
      }
      r["image"] = jobs_.store_blob("uploads", *image, ".png").string();
      detail::send_json(res, 202, {{"id", jobs_.submit(JobKind::Train, r)}});
    });

    http_.Post("/jobs/edit", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json r = detail::request_json(req);
      EditRequest request;
      try {
        request = r.get<EditRequest>();
      } catch (const nlohmann::json::exception& e) {
        detail::bad_request("request", e.what());
      } catch (const Error& e) {
        detail::bad_request("mode", e.what());
      }
      // The mask arrives as an upload, not as a server-side path.
      request.mask.clear();
      request.output.clear();
      const auto mask = detail::upload(req, "mask");
      if (mask) {
        try {
          decode_mask(detail::as_bytes(*mask));
        } catch (const Error& e) {
          detail::bad_request("mask", e.what());
        }
        request.mask = jobs_.store_blob("masks", *mask, ".png").string();
      }
      auto fields = request.validate();
      if (!request.checkpoint.empty() && !JobManager::valid_name(request.checkpoint)) {
        fields.push_back({"checkpoint", "checkpoint name must be [A-Za-z0-9._-]+"});
      }
      if (!fields.empty()) throw RequestError(400, std::move(fields));
      if (!fs::exists(jobs_.checkpoint_path(request.checkpoint))) {
        throw RequestError(404, {{"checkpoint", "unknown checkpoint '" + request.checkpoint + "'"}});
      }
      if (request.llm_url.empty()) request.llm_url = jobs_.config().llm_url;
      detail::send_json(res, 202, {{"id", jobs_.submit(JobKind::Edit, request)}});
    });

    http_.Post("/jobs/score", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json r = detail::request_json(req);
      if (!r.contains("prompt") || !r.at("prompt").is_string() || rsedit::detail::trim(r.at("prompt").get<std::string>()).empty()) {
        detail::bad_request("prompt", "a prompt is required");
      }
      const std::string embedder = r.value("embedder", std::string("mock"));
      if (embedder != "mock" && embedder != "remoteclip") detail::bad_request("embedder", "unknown embedder");
      if (r.contains("omega") && !r.at("omega").is_number()) detail::bad_request("omega", "must be a number");
      const auto image = detail::upload(req, "image");
      if (!image) detail::bad_request("image", "an image upload is required");
      try {
        decode_rgb(detail::as_bytes(*image));
      } catch (const Error& e) {
        detail::bad_request("image", e.what());
      }
      r["image"] = jobs_.store_blob("uploads", *image, ".png").string();
      detail::send_json(res, 202, {{"id", jobs_.submit(JobKind::Score, r)}});
    });

    http_.Get(R"(/jobs/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto job = jobs_.get(req.matches[1]);
      if (!job) return detail::send_error(res, 404, "not-found", "unknown job");
      detail::send_json(res, 200, job_json(*job));
    });

    http_.Get(R"(/jobs/([0-9a-f]+)/result)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto job = jobs_.get(req.matches[1]);
      if (!job) return detail::send_error(res, 404, "not-found", "unknown job");
      if (job->state == JobState::Failed) {
        nlohmann::json body = job->error.is_object() ? job->error : nlohmann::json{{"error", "failed"}};
        body["state"] = to_string(job->state);
        return detail::send_json(res, 409, body);
      }
      if (job->state != JobState::Done) {
        return detail::send_json(res, 409, {{"error", "not-ready"},
                                            {"message", "job is " + to_string(job->state)},
                                            {"state", to_string(job->state)}});
      }
      const fs::path path = jobs_.config().data_dir / job->result;
      if (job->kind == JobKind::Train) {
        return detail::send_json(res, 200, {{"checkpoint", fs::path(job->result).stem().string()},
                                            {"bytes", fs::file_size(path)}});
      }
      std::ifstream in(path, std::ios::binary);
      if (!in) return detail::send_error(res, 500, "io", "result artifact missing");
      std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (job->kind == JobKind::Edit) {
        res.set_content(std::move(bytes), "image/png");
      } else {
        nlohmann::json records = nlohmann::json::array();
        std::istringstream lines(bytes);
        for (std::string line; std::getline(lines, line);) {
          if (!line.empty()) records.push_back(nlohmann::json::parse(line));
        }
        detail::send_json(res, 200, {{"records", records}});
      }
    });

    http_.Delete(R"(/jobs/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      switch (jobs_.cancel(req.matches[1])) {
        case CancelOutcome::NotFound: return detail::send_error(res, 404, "not-found", "unknown job");
        case CancelOutcome::AlreadyFinished:
          return detail::send_error(res, 409, "finished", "job already finished");
        case CancelOutcome::Cancelled: break;
      }
      detail::send_json(res, 200, job_json(*jobs_.get(req.matches[1])));
    });

    http_.Post("/variants", [this](const httplib::Request& req, httplib::Response& res) {
      const nlohmann::json r = detail::request_json(req);
      EditRequest request;
      request.prompts = {r.value("prompt", std::string())};
      if (rsedit::detail::trim(request.prompts.front()).empty()) detail::bad_request("prompt", "a prompt is required");
      request.prompt_ensemble = true;
      request.ensemble_size = r.value("k", 5);
      if (request.ensemble_size < 1 || request.ensemble_size > 16) detail::bad_request("k", "must lie in [1, 16]");
      request.llm_url = r.value("llm_url", jobs_.config().llm_url);
      std::vector<std::string> warnings;
      const auto texts = request_texts(request, nullptr, [&](const std::string& w) { warnings.push_back(w); });
      detail::send_json(res, 200, {{"variants", texts}, {"warnings", warnings}});
    });
  }

  JobManager jobs_;
  httplib::Server http_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace rsedit::service
