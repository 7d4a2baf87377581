#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lakegrid/domain/uid.hpp"

namespace lakegrid::scheduler {

/// Append-only record of queue changes, one JSON object per line, so a
/// restarted scheduler can requeue the jobs it had not finished. A torn
/// final line is ignored.
class Journal {
 public:
  explicit Journal(std::filesystem::path file);

  void enqueued(const JobId& job, const std::filesystem::path& archive);
  void settled(const JobId& job, bool success);
  void aborted(const Uid& uid);

  struct Recovered {
    std::vector<std::pair<JobId, std::filesystem::path>> unfinished;  // in enqueue order
    std::set<Uid> aborted;
  };
  Recovered recover() const;

  const std::filesystem::path& path() const { return file_; }

 private:
  void append(const std::string& line);

  std::filesystem::path file_;
  std::mutex mu_;
  std::ofstream out_;
};

}  // namespace lakegrid::scheduler
