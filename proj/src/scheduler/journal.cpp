#include "lakegrid/scheduler/journal.hpp"

#include <nlohmann/json.hpp>

#include <map>

#include "lakegrid/common/error.hpp"

namespace lakegrid::scheduler {

using nlohmann::json;

Journal::Journal(std::filesystem::path file) : file_(std::move(file)) {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  out_.open(file_, std::ios::app | std::ios::binary);
  if (!out_) throw Error(ErrorKind::Internal, "cannot open journal " + file_.string());
}

void Journal::append(const std::string& line) {
  std::lock_guard lock(mu_);
  out_ << line << '\n';
  out_.flush();
}

void Journal::enqueued(const JobId& job, const std::filesystem::path& archive) {
  append(json{{"op", "enqueue"}, {"job", job.str()}, {"archive", archive.string()}}.dump());
}

void Journal::settled(const JobId& job, bool success) {
  append(json{{"op", "settle"}, {"job", job.str()}, {"ok", success}}.dump());
}

void Journal::aborted(const Uid& uid) { append(json{{"op", "abort"}, {"uid", uid.str()}}.dump()); }

Journal::Recovered Journal::recover() const {
  Recovered r;
  std::ifstream in(file_, std::ios::binary);
  std::vector<std::pair<JobId, std::filesystem::path>> order;
  std::map<std::string, bool> done;
  std::string line;
  while (std::getline(in, line)) {
    json j;
    try {
      j = json::parse(line);
      const auto op = j.at("op").get<std::string>();
      if (op == "enqueue") {
        order.emplace_back(JobId::parse(j.at("job").get<std::string>()), j.at("archive").get<std::string>());
      } else if (op == "settle") {
        done[j.at("job").get<std::string>()] = true;
      } else if (op == "abort") {
        r.aborted.insert(Uid::parse(j.at("uid").get<std::string>()));
      }
    } catch (const std::exception&) {
      continue;  // torn or foreign line
    }
  }
  for (auto& [job, path] : order) {
    if (!done.count(job.str()) && !r.aborted.count(job.uid)) r.unfinished.emplace_back(job, path);
  }
  return r;
}

}  // namespace lakegrid::scheduler
