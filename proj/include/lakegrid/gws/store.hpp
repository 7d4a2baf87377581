#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lakegrid/common/clock.hpp"
#include "lakegrid/domain/experiment.hpp"

namespace lakegrid::gws {

/// All per-experiment state, on disk:
///   {root}/{uid}/record.meta   experiment record
///   {root}/{uid}/inputs/       upload and request description
///   {root}/{uid}/jobs/         packaged job archives
///   {root}/{uid}/results/      per-job result archives, collated archive
///   {root}/{uid}/journal/      pending tasks
/// Record updates are serialized per uid with a file lock, so several
/// processes may share one root.
class ExperimentStore {
 public:
  explicit ExperimentStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path dir(const Uid& uid) const { return root_ / uid.str(); }
  std::filesystem::path inputs_dir(const Uid& uid) const { return dir(uid) / "inputs"; }
  std::filesystem::path jobs_dir(const Uid& uid) const { return dir(uid) / "jobs"; }
  std::filesystem::path results_dir(const Uid& uid) const { return dir(uid) / "results"; }
  std::filesystem::path journal_dir(const Uid& uid) const { return dir(uid) / "journal"; }
  std::filesystem::path job_archive(const JobId& job) const;
  std::filesystem::path job_result(const JobId& job) const;
  std::filesystem::path job_failure(const JobId& job) const;
  std::filesystem::path collated(const Uid& uid) const { return results_dir(uid) / "collated.lgar"; }

  // Throws Error(Conflict) if the uid exists.
  void create(const ExperimentRecord& record);
  bool exists(const Uid& uid) const;
  // Throws Error(NotFound).
  ExperimentRecord load(const Uid& uid) const;
  // Applies `fn` under the uid lock and persists the result.
  ExperimentRecord update(const Uid& uid, const std::function<void(ExperimentRecord&)>& fn);
  std::vector<Uid> list() const;

  // Deletes experiment directories whose record is older than `max_age`
  // and in a terminal state. Returns how many were removed.
  std::size_t prune(std::chrono::milliseconds max_age, WallTime now);

 private:
  std::filesystem::path record_path(const Uid& uid) const { return dir(uid) / "record.meta"; }
  std::filesystem::path lock_path(const Uid& uid) const { return dir(uid) / ".lock"; }

  std::filesystem::path root_;
};

enum class TaskKind { Generate = 1, Submit = 2, Collate = 3 };
std::string_view to_string(TaskKind k);

struct TaskEntry {
  Uid uid;
  TaskKind kind = TaskKind::Generate;
  WallTime enqueued_at{};
};

/// Durable task queue: each pending task is a file in the experiment's
/// journal directory, removed once the task finishes. Tasks of one uid run
/// in kind order.
class TaskQueue {
 public:
  explicit TaskQueue(const ExperimentStore& store) : store_(store) {}

  void enqueue(const Uid& uid, TaskKind kind);
  void remove(const TaskEntry& task);
  // All pending tasks, ordered by uid enqueue time then kind.
  std::vector<TaskEntry> pending() const;
  std::vector<TaskEntry> pending(const Uid& uid) const;

 private:
  std::filesystem::path file(const Uid& uid, TaskKind kind) const;

  const ExperimentStore& store_;
};

}  // namespace lakegrid::gws
