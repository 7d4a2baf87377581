#include "lakegrid/gws/gateway.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"
#include "lakegrid/common/random.hpp"
#include "lakegrid/gws/upload.hpp"
#include "lakegrid/sweep/sweep.hpp"

namespace lakegrid::gws {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kUploadFile = "upload.lgar";
constexpr const char* kBaselineFile = "baseline.lgar";
constexpr const char* kIndexFile = "index.json";

int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidSpec:
    case ErrorKind::Input:
    case ErrorKind::Validation:
      return 400;
    case ErrorKind::Policy: return 403;
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Conflict: return 409;
    default: return 500;
  }
}

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, const Error& e, json extra = json::object()) {
  extra["error"] = std::string(to_string(e.kind()));
  extra["message"] = e.what();
  reply_json(res, http_status(e.kind()), extra);
}

json status_json(const ExperimentRecord& r) {
  json j;
  j["uid"] = r.uid.str();
  j["state"] = std::string(to_string(r.state));
  j["fraction"] = r.completion_fraction();
  j["sims"] = r.sim_count;
  j["generation"] = std::string(to_string(r.spec.kind));
  if (auto seed = r.spec.params.find("seed")) j["seed"] = *seed;
  j["metrics"] = {{"service_response_ms", r.metrics.service_response},
                  {"input_processing_ms", r.metrics.input_processing},
                  {"jobs_total", r.metrics.jobs_total},
                  {"jobs_done", r.metrics.jobs_done},
                  {"jobs_failed", r.metrics.jobs_failed}};
  if (!r.failure_reason.empty()) j["failure_reason"] = r.failure_reason;
  return j;
}

std::string form_field(const httplib::Request& req, const std::string& name) {
  if (!req.has_file(name)) throw Error(ErrorKind::Validation, "multipart field '" + name + "' is required");
  return req.get_file_value(name).content;
}

gemt::ResultFilter parse_filter(const httplib::Request& req) {
  gemt::ResultFilter f;
  if (req.has_param("sims")) {
    std::set<std::uint64_t> ids;
    for (const auto& part : split(req.get_param_value("sims"), ',')) {
      auto v = parse_int(trim(part));
      if (!v || *v < 0) throw Error(ErrorKind::Validation, "sims: '" + part + "' is not a simulation id");
      ids.insert(static_cast<std::uint64_t>(*v));
    }
    f.sims = std::move(ids);
  }
  if (req.has_param("columns")) {
    for (const auto& part : split(req.get_param_value("columns"), ',')) {
      auto c = trim(part);
      if (!c.empty()) f.columns.push_back(c);
    }
  }
  return f;
}

std::map<std::string, std::vector<std::uint64_t>> read_index(const ExperimentStore& store, const Uid& uid) {
  std::map<std::string, std::vector<std::uint64_t>> out;
  auto j = json::parse(read_file(store.jobs_dir(uid) / kIndexFile));
  for (auto& [job, sims] : j.items()) out[job] = sims.get<std::vector<std::uint64_t>>();
  return out;
}

// Enqueues COLLATE when every job of a running experiment has settled.
void maybe_collate(const ExperimentRecord& r, TaskQueue& tasks) {
  if (r.state == ExperimentState::Running && r.metrics.jobs_total > 0 &&
      r.metrics.jobs_done + r.metrics.jobs_failed >= r.metrics.jobs_total) {
    tasks.enqueue(r.uid, TaskKind::Collate);
  }
}

}  // namespace

void SchedulerSink::submit(const JobId& job, SharedBytes archive, const fs::path& archive_path) {
  try {
    service_.submit(job, std::move(archive), archive_path);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Conflict) throw;
  }
}

ResultRecorder::ResultRecorder(fs::path data_root, EventLog* log)
    : store_(std::move(data_root)), tasks_(store_), log_(log) {}

void ResultRecorder::on_settled(const scheduler::SchedulerCore::Settled& s) {
  const auto& uid = s.job.uid;
  if (!store_.exists(uid)) return;
  store_.update(uid, [&](ExperimentRecord& r) {
    if (is_terminal(r.state)) return;
    bool fresh = s.success ? write_file_once(store_.job_result(s.job), s.result ? *s.result : std::string())
                           : write_file_once(store_.job_failure(s.job), s.reason);
    if (!fresh) return;
    if (s.success) {
      ++r.metrics.jobs_done;
    } else {
      ++r.metrics.jobs_failed;
    }
    if (log_) log_->append(clock_.now().count(), "gws", s.success ? "job_recorded" : "job_failed", s.job.str());
    maybe_collate(r, tasks_);
  });
}

void ResultRecorder::record_missing(const JobId& job, const std::string& reason) {
  if (!store_.exists(job.uid)) return;
  store_.update(job.uid, [&](ExperimentRecord& r) {
    if (is_terminal(r.state)) return;
    if (fs::exists(store_.job_result(job)) || fs::exists(store_.job_failure(job))) return;
    if (!write_file_once(store_.results_dir(job.uid) / (job.str() + ".missing"), reason)) return;
    ++r.metrics.jobs_failed;
    if (log_) log_->append(clock_.now().count(), "gws", "job_missing", job.str() + " " + reason);
    maybe_collate(r, tasks_);
  });
}

Gateway::Gateway(GatewayConfig config, JobSink& sink, EventLog* log)
    : config_(std::move(config)), sink_(sink), log_(log), store_(config_.data_root), tasks_(store_) {
  config_.gemt.validate();
  if (config_.task_workers == 0) throw Error(ErrorKind::Validation, "task_workers must be >= 1");
}

Gateway::~Gateway() { stop(); }

std::string Gateway::url() const { return "http://" + config_.host + ":" + std::to_string(port_); }

void Gateway::note(const std::string& kind, const std::string& detail) {
  if (log_) log_->append(clock_.now().count(), "gws", kind, detail);
}

void Gateway::start() {
  stopping_ = false;
  http_ = std::make_unique<httplib::Server>();
  http_->set_payload_max_length(config_.max_upload_bytes);
  routes();
  port_ = config_.port == 0 ? http_->bind_to_any_port(config_.host) : config_.port;
  if (config_.port != 0 && !http_->bind_to_port(config_.host, config_.port)) port_ = -1;
  if (port_ < 0) throw Error(ErrorKind::Transport, "cannot listen on " + config_.host + ":" + std::to_string(config_.port));
  http_thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  poller_ = std::thread([this] { poll_loop(); });
  for (std::size_t i = 0; i < config_.task_workers; ++i) workers_.emplace_back([this] { task_loop(); });
}

void Gateway::stop() {
  if (!http_) return;
  stopping_ = true;
  http_->stop();
  if (http_thread_.joinable()) http_thread_.join();
  cv_.notify_all();
  if (poller_.joinable()) poller_.join();
  for (auto& w : workers_) w.join();
  workers_.clear();
  http_.reset();
  std::lock_guard lk(mu_);
  ready_.clear();
  busy_.clear();
}

// ---------------------------------------------------------------- tasks

void Gateway::poll_loop() {
  while (!stopping_) {
    std::vector<TaskEntry> pending;
    try {
      pending = tasks_.pending();
    } catch (const std::exception&) {
      // A directory vanished under us (prune); the next pass sees a consistent view.
    }
    {
      std::unique_lock lk(mu_);
      std::set<Uid> seen;
      for (const auto& t : pending) {
        if (seen.count(t.uid)) continue;
        seen.insert(t.uid);
        if (busy_.count(t.uid)) continue;
        // Tasks of one uid strictly in kind order.
        auto first = tasks_.pending(t.uid);
        if (first.empty()) continue;
        busy_.insert(t.uid);
        ready_.push_back(first.front());
      }
      if (!ready_.empty()) cv_.notify_all();
      cv_.wait_for(lk, config_.task_poll, [this] { return stopping_.load() || wake_; });
      wake_ = false;
    }
  }
}

void Gateway::task_loop() {
  for (;;) {
    std::optional<TaskEntry> next;
    {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [this] { return stopping_.load() || !ready_.empty(); });
      if (stopping_) return;
      next = ready_.front();
      ready_.pop_front();
    }
    const TaskEntry& t = *next;
    bool finished = true;
    try {
      if (config_.before_task) config_.before_task(t.uid, t.kind);
      if (!stopping_) run_task(t);
    } catch (const Stopped&) {
      finished = false;
    } catch (const std::exception& e) {
      fail(t.uid, e.what());
    }
    if (stopping_) finished = false;
    if (finished) tasks_.remove(t);
    std::lock_guard lk(mu_);
    busy_.erase(t.uid);
    wake_ = true;
    cv_.notify_all();
  }
}

void Gateway::run_task(const TaskEntry& t) {
  if (!store_.exists(t.uid)) return;
  if (is_terminal(store_.load(t.uid).state)) return;
  note("task_start", t.uid.str() + " " + std::string(to_string(t.kind)));
  switch (t.kind) {
    case TaskKind::Generate: generate(t.uid); break;
    case TaskKind::Submit: submit_jobs(t.uid); break;
    case TaskKind::Collate: collate_results(t.uid); break;
  }
}

bool Gateway::aborted(const Uid& uid) const {
  std::lock_guard lk(mu_);
  return aborted_.count(uid) != 0;
}

void Gateway::fail(const Uid& uid, const std::string& reason) {
  try {
    store_.update(uid, [&](ExperimentRecord& r) {
      if (is_terminal(r.state)) return;
      r = transition(r, ExperimentState::Failed);
      r.failure_reason = reason;
    });
    note("experiment_failed", uid.str() + " " + reason);
  } catch (const std::exception&) {
  }
}

void Gateway::generate(const Uid& uid) {
  const auto started = std::chrono::steady_clock::now();
  auto record = store_.update(uid, [](ExperimentRecord& r) {
    if (r.state == ExperimentState::Submitted) r = transition(r, ExperimentState::Generating);
  });

  std::vector<SimulationSpec> sims;
  if (record.spec.kind == GenerationKind::VerbatimUpload) {
    sims = sims_from_upload(gemt::unpack(read_file(store_.inputs_dir(uid) / kUploadFile)));
  } else {
    auto spec = sweep::SweepSpec::from_kv(record.spec.params);
    sweep::validate(spec);
    auto baseline = baseline_from_upload(gemt::unpack(read_file(store_.inputs_dir(uid) / kBaselineFile)));
    sims = sweep::expand(baseline, spec);
  }

  std::vector<JobId> job_ids;
  json index = json::object();
  try {
    gemt::group_streaming(
        uid, sims, config_.gemt,
        [&](JobBundle&& b) {
          if (stopping_) throw Stopped{};
          if (aborted(uid)) throw AbortedWhileGenerating{};
          auto path = store_.job_archive(b.job_id);
          write_file_once(path, b.archive);
          sink_.submit(b.job_id, share(std::move(b.archive)), path);
          note("job_submitted", b.job_id.str());
          index[b.job_id.str()] = b.sim_ids;
          job_ids.push_back(b.job_id);
        },
        log_);
  } catch (const AbortedWhileGenerating&) {
    note("generate_aborted", uid.str());
    return;
  }
  write_file_atomic(store_.jobs_dir(uid) / kIndexFile, index.dump());
  const double took = elapsed_ms(started);
  store_.update(uid, [&](ExperimentRecord& r) {
    r.job_ids = job_ids;
    r.sim_count = sims.size();
    r.metrics.jobs_total = job_ids.size();
    r.metrics.input_processing = took;
  });
  {
    std::lock_guard lk(mu_);
    generated_here_.insert(uid);
  }
  tasks_.enqueue(uid, TaskKind::Submit);
  note("generated", uid.str() + " jobs=" + std::to_string(job_ids.size()));
}

void Gateway::submit_jobs(const Uid& uid) {
  bool resubmit;
  {
    std::lock_guard lk(mu_);
    resubmit = generated_here_.erase(uid) == 0;
  }
  auto record = store_.load(uid);
  if (resubmit) {
    // The generating process is gone; hand the scheduler anything it may
    // not have seen. Duplicates are ignored by the sink.
    for (const auto& job : record.job_ids) {
      if (stopping_) throw Stopped{};
      if (fs::exists(store_.job_result(job)) || fs::exists(store_.job_failure(job))) continue;
      auto path = store_.job_archive(job);
      sink_.submit(job, share(read_file(path)), path);
    }
  }
  record = store_.update(uid, [&](ExperimentRecord& r) {
    if (r.state == ExperimentState::Generating) r = transition(r, ExperimentState::Running);
    maybe_collate(r, tasks_);
  });
  note("running", uid.str());
}

void Gateway::collate_results(const Uid& uid) {
  auto record = store_.load(uid);
  if (record.state != ExperimentState::Running) return;
  std::vector<gemt::JobOutcome> outcomes;
  std::size_t failed_jobs = 0;
  for (auto& [job, sims] : read_index(store_, uid)) {
    auto id = JobId::parse(job);
    gemt::JobOutcome o;
    o.job_id = job;
    o.sim_ids = sims;
    if (fs::exists(store_.job_result(id))) {
      o.result_archive = read_file(store_.job_result(id));
    } else if (fs::exists(store_.job_failure(id))) {
      o.failure_reason = read_file(store_.job_failure(id));
      ++failed_jobs;
    } else {
      o.failure_reason = "result archive missing";
      ++failed_jobs;
    }
    outcomes.push_back(std::move(o));
  }
  auto collated = gemt::collate(uid, outcomes, config_.gemt);
  write_file_once(store_.collated(uid), gemt::results_archive(collated, config_.gemt.compress));
  store_.update(uid, [&](ExperimentRecord& r) {
    if (r.state != ExperimentState::Running) return;
    if (collated.summary.failed == 0) {
      r = transition(r, ExperimentState::Completed);
    } else {
      r = transition(r, ExperimentState::Failed);
      r.failure_reason = std::to_string(collated.summary.failed) + " of " + std::to_string(collated.summary.total) +
                         " simulations failed (" + std::to_string(failed_jobs) + " jobs lost); partial results available";
    }
  });
  note("collated", uid.str() + " sims_ok=" + std::to_string(collated.summary.succeeded) +
                       " sims_failed=" + std::to_string(collated.summary.failed));
}

// ----------------------------------------------------------------- http

void Gateway::routes() {
  auto accept = [this](const httplib::Request& req, httplib::Response& res, GenerationKind kind) {
    const auto started = std::chrono::steady_clock::now();
    try {
      ExperimentRecord record(Uid::generate());
      record.created_at = wall_now();
      record.spec.kind = kind;
      std::string archive;
      if (kind == GenerationKind::VerbatimUpload) {
        archive = req.body;
        auto files = screen_upload(archive, config_.max_upload_bytes);
        record.sim_count = sims_from_upload(files).size();
      } else {
        archive = form_field(req, "archive");
        auto files = screen_upload(archive, config_.max_upload_bytes);
        baseline_from_upload(files);
        auto params = KeyValues::parse(form_field(req, kind == GenerationKind::LinearSweep ? "params" : "description"));
        if (kind == GenerationKind::LinearSweep) {
          params.set("mode", "linear");
        } else {
          params.set("mode", "sampled");
          if (!params.has("seed")) params.set("seed", std::to_string(secure_random_u64() >> 1));
          // Sampled descriptions are checked before the uid is issued.
          sweep::validate(sweep::SweepSpec::from_kv(params));
        }
        if (auto c = params.find("count")) {
          if (auto n = parse_int(*c); n && *n > 0) record.sim_count = static_cast<std::uint64_t>(*n);
        }
        record.spec.params = std::move(params);
      }
      record.workdir = store_.dir(record.uid).string();
      store_.create(record);
      write_file(store_.inputs_dir(record.uid) /
                     (kind == GenerationKind::VerbatimUpload ? kUploadFile : kBaselineFile),
                 archive);
      tasks_.enqueue(record.uid, TaskKind::Generate);
      const double took = elapsed_ms(started);
      store_.update(record.uid, [&](ExperimentRecord& r) { r.metrics.service_response = took; });
      {
        std::lock_guard lk(mu_);
        wake_ = true;
      }
      cv_.notify_all();
      note("uid_returned", record.uid.str());
      reply_json(res, 202, {{"uid", record.uid.str()}, {"state", "SUBMITTED"}});
    } catch (const Error& e) {
      note("rejected", e.what());
      reply_error(res, e);
    }
  };

  http_->Post("/experiment", [accept](const httplib::Request& req, httplib::Response& res) {
    accept(req, res, GenerationKind::VerbatimUpload);
  });
  http_->Post("/experiment/sweep", [accept](const httplib::Request& req, httplib::Response& res) {
    accept(req, res, GenerationKind::LinearSweep);
  });
  http_->Post("/experiment/sampled", [accept](const httplib::Request& req, httplib::Response& res) {
    accept(req, res, GenerationKind::DistributionSample);
  });

  http_->Get(R"(/experiment/([^/]+)/status)", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      reply_json(res, 200, status_json(store_.load(Uid::parse(req.matches[1].str()))));
    } catch (const Error& e) {
      reply_error(res, e);
    }
  });

  http_->Get(R"(/experiment/([^/]+)/results)", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto uid = Uid::parse(req.matches[1].str());
      const auto record = store_.load(uid);
      if (!fs::exists(store_.collated(uid))) {
        reply_error(res, Error(ErrorKind::Conflict, "experiment is " + std::string(to_string(record.state)) +
                                                        "; results are not available"),
                    {{"state", std::string(to_string(record.state))}, {"fraction", record.completion_fraction()}});
        return;
      }
      auto archive = read_file(store_.collated(uid));
      auto filter = parse_filter(req);
      if (filter.sims || !filter.columns.empty()) {
        archive = gemt::filter_results(std::move(archive), filter, config_.gemt.compress);
      }
      note("results_served", uid.str());
      res.status = 200;
      res.set_content(std::move(archive), "application/octet-stream");
    } catch (const Error& e) {
      reply_error(res, e);
    }
  });

  http_->Post(R"(/experiment/([^/]+)/abort)", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto uid = Uid::parse(req.matches[1].str());
      {
        std::lock_guard lk(mu_);
        aborted_.insert(uid);
      }
      auto record = store_.update(uid, [&](ExperimentRecord& r) {
        if (is_terminal(r.state)) {
          throw Error(ErrorKind::Conflict, "experiment already " + std::string(to_string(r.state)));
        }
        r = transition(r, ExperimentState::Aborted);
      });
      sink_.abort(uid);
      note("abort", uid.str());
      reply_json(res, 200, {{"uid", uid.str()}, {"state", std::string(to_string(record.state))}});
    } catch (const Error& e) {
      reply_error(res, e);
    }
  });

  http_->Get("/service/health", [this](const httplib::Request&, httplib::Response& res) {
    std::size_t tasks = 0;
    try {
      tasks = tasks_.pending().size();
    } catch (const std::exception&) {
    }
    reply_json(res, 200,
               {{"queue_depth", sink_.queue_depth()}, {"workers_live", sink_.workers_live()}, {"tasks_pending", tasks}});
  });
}

}  // namespace lakegrid::gws
