#include "lakegrid/gws/store.hpp"

#include <algorithm>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"

namespace lakegrid::gws {

namespace fs = std::filesystem;

ExperimentStore::ExperimentStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

fs::path ExperimentStore::job_archive(const JobId& job) const { return jobs_dir(job.uid) / (job.str() + ".lgar"); }
fs::path ExperimentStore::job_result(const JobId& job) const { return results_dir(job.uid) / (job.str() + ".out"); }
fs::path ExperimentStore::job_failure(const JobId& job) const {
  return results_dir(job.uid) / (job.str() + ".failed");
}

void ExperimentStore::create(const ExperimentRecord& record) {
  const auto d = dir(record.uid);
  std::error_code ec;
  if (!fs::create_directory(d, ec)) throw Error(ErrorKind::Conflict, "experiment " + record.uid.str() + " exists");
  for (const auto& sub : {"inputs", "jobs", "results", "journal"}) fs::create_directories(d / sub);
  FileLock lock(lock_path(record.uid));
  write_file_atomic(record_path(record.uid), to_meta(record));
}

bool ExperimentStore::exists(const Uid& uid) const { return fs::exists(record_path(uid)); }

ExperimentRecord ExperimentStore::load(const Uid& uid) const {
  if (!exists(uid)) throw Error(ErrorKind::NotFound, "unknown experiment " + uid.str());
  return record_from_meta(read_file(record_path(uid)));
}

ExperimentRecord ExperimentStore::update(const Uid& uid, const std::function<void(ExperimentRecord&)>& fn) {
  if (!exists(uid)) throw Error(ErrorKind::NotFound, "unknown experiment " + uid.str());
  FileLock lock(lock_path(uid));
  auto record = record_from_meta(read_file(record_path(uid)));
  fn(record);
  write_file_atomic(record_path(uid), to_meta(record));
  return record;
}

std::vector<Uid> ExperimentStore::list() const {
  std::vector<Uid> out;
  for (const auto& e : fs::directory_iterator(root_)) {
    const auto name = e.path().filename().string();
    if (e.is_directory() && Uid::is_valid(name) && fs::exists(e.path() / "record.meta")) out.push_back(Uid::parse(name));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t ExperimentStore::prune(std::chrono::milliseconds max_age, WallTime now) {
  std::size_t removed = 0;
  for (const auto& uid : list()) {
    auto r = load(uid);
    if (is_terminal(r.state) && now - r.created_at > max_age) {
      fs::remove_all(dir(uid));
      ++removed;
    }
  }
  return removed;
}

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Generate: return "GENERATE";
    case TaskKind::Submit: return "SUBMIT";
    case TaskKind::Collate: return "COLLATE";
  }
  return "?";
}

fs::path TaskQueue::file(const Uid& uid, TaskKind kind) const {
  return store_.journal_dir(uid) / (std::to_string(static_cast<int>(kind)) + "-" + std::string(to_string(kind)) + ".task");
}

void TaskQueue::enqueue(const Uid& uid, TaskKind kind) {
  fs::create_directories(store_.journal_dir(uid));
  write_file_once(file(uid, kind), to_rfc3339(wall_now()));
}

void TaskQueue::remove(const TaskEntry& task) { fs::remove(file(task.uid, task.kind)); }

std::vector<TaskEntry> TaskQueue::pending(const Uid& uid) const {
  std::vector<TaskEntry> out;
  for (auto kind : {TaskKind::Generate, TaskKind::Submit, TaskKind::Collate}) {
    auto f = file(uid, kind);
    if (!fs::exists(f)) continue;
    TaskEntry t{uid, kind, {}};
    try {
      t.enqueued_at = parse_rfc3339(read_file(f));
    } catch (const std::exception&) {
    }
    out.push_back(t);
  }
  return out;
}

std::vector<TaskEntry> TaskQueue::pending() const {
  std::vector<TaskEntry> out;
  for (const auto& uid : store_.list()) {
    auto p = pending(uid);
    out.insert(out.end(), p.begin(), p.end());
  }
  std::stable_sort(out.begin(), out.end(), [](const TaskEntry& a, const TaskEntry& b) {
    return std::tie(a.enqueued_at, a.kind) < std::tie(b.enqueued_at, b.kind);
  });
  return out;
}

}  // namespace lakegrid::gws
