#include "lakegrid/client/client.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>
#include <regex>
#include <thread>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"
#include "lakegrid/gemt/archive.hpp"

namespace lakegrid::client {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

ErrorKind kind_for_status(int status) {
  switch (status) {
    case 400:
    case 413: return ErrorKind::Validation;
    case 403: return ErrorKind::Policy;
    case 404: return ErrorKind::NotFound;
    case 409: return ErrorKind::Conflict;
    default: return ErrorKind::Internal;
  }
}

[[noreturn]] void raise_rejection(const httplib::Response& res) {
  std::string message = res.body;
  try {
    auto j = json::parse(res.body);
    message = j.value("message", res.body);
    if (j.contains("fraction")) message += " (fraction=" + format_double(j["fraction"].get<double>()) + ")";
  } catch (const json::exception&) {
    if (message.empty()) message = "HTTP " + std::to_string(res.status);
  }
  throw ServerRejection(kind_for_status(res.status), res.status, message);
}

std::string query_string(const ResultQuery& q) {
  std::vector<std::string> parts;
  if (q.sims) {
    std::vector<std::string> ids;
    for (auto id : *q.sims) ids.push_back(std::to_string(id));
    parts.push_back("sims=" + join(ids, ","));
  }
  if (!q.columns.empty()) parts.push_back("columns=" + join(q.columns, ","));
  return parts.empty() ? std::string() : "?" + join(parts, "&");
}

void add_tree(std::map<std::string, std::string>& files, const fs::path& dir, const std::string& prefix) {
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    files[prefix + fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
  }
}

}  // namespace

std::string archive_experiment_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Validation, dir.string() + " is not a directory");
  std::map<std::string, std::string> files;
  std::size_t sims = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_directory()) continue;
    const auto before = files.size();
    add_tree(files, e.path(), e.path().filename().string() + "/");
    if (files.size() > before) ++sims;
  }
  if (sims == 0) throw Error(ErrorKind::Validation, dir.string() + " contains no simulation subdirectories");
  return gemt::pack(files);
}

std::string archive_baseline_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Validation, dir.string() + " is not a directory");
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) files[e.path().filename().string()] = read_file(e.path());
  }
  if (files.empty()) throw Error(ErrorKind::Validation, dir.string() + " contains no input files");
  return gemt::pack(files);
}

Session::Session(ClientOptions options) : options_(std::move(options)) {
  static const std::regex url(R"(^http://([A-Za-z0-9.\-]+|\[[0-9a-fA-F:]+\]):([0-9]{1,5})/?$)");
  std::smatch m;
  if (!std::regex_match(options_.service_url, m, url)) {
    throw Error(ErrorKind::Validation, "service url must look like http://host:port, got '" + options_.service_url + "'");
  }
  host_ = m[1].str();
  port_ = std::stoi(m[2].str());
  if (port_ <= 0 || port_ > 65535) throw Error(ErrorKind::Validation, "service url port out of range");
  if (options_.retries < 0) throw Error(ErrorKind::Validation, "retries must be >= 0");
}

namespace {

struct Call {
  httplib::Client cli;
  Call(const std::string& host, int port, std::chrono::milliseconds timeout) : cli(host, port) {
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
  }
};

httplib::Response expect(httplib::Result r, const std::string& what) {
  if (!r) throw Error(ErrorKind::Transport, what + ": " + httplib::to_string(r.error()));
  if (r->status < 200 || r->status >= 300) raise_rejection(*r);
  return *r;
}

Uid uid_from(const httplib::Response& res) {
  try {
    return Uid::parse(json::parse(res.body).at("uid").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Transport, std::string("unexpected service reply: ") + e.what());
  }
}

}  // namespace

Uid Session::run_experiment(const fs::path& dir) {
  auto archive = archive_experiment_dir(dir);
  Call c(host_, port_, options_.timeout);
  last_uid_ = uid_from(expect(c.cli.Post("/experiment", archive, "application/octet-stream"), "submit"));
  return *last_uid_;
}

Uid Session::run_sweep(const fs::path& dir, const std::string& driver_file, const std::string& parameter,
                       double start, double end, std::int64_t count) {
  if (count < 1) throw Error(ErrorKind::Validation, "count must be >= 1");
  if (parameter.empty()) throw Error(ErrorKind::Validation, "parameter name is required");
  if (!fs::is_regular_file(dir / driver_file)) {
    throw Error(ErrorKind::Validation, "driver file " + (dir / driver_file).string() + " does not exist");
  }
  KeyValues params;
  params.set("driver_file", driver_file);
  params.set("variable", parameter);
  params.set("start_value", format_double(start));
  params.set("end_value", format_double(end));
  params.set("count", std::to_string(count));
  auto archive = archive_baseline_dir(dir);
  httplib::MultipartFormDataItems items{{"archive", archive, "baseline.lgar", "application/octet-stream"},
                                        {"params", params.format(), "", "text/plain"}};
  Call c(host_, port_, options_.timeout);
  last_uid_ = uid_from(expect(c.cli.Post("/experiment/sweep", items), "submit"));
  return *last_uid_;
}

Uid Session::run_sampled(const fs::path& dir, const KeyValues& description) {
  if (auto count = description.find("count")) {
    auto n = parse_int(*count);
    if (!n || *n < 1) throw Error(ErrorKind::Validation, "count must be >= 1");
  }
  if (auto driver = description.find("driver_file"); driver && !fs::is_regular_file(dir / *driver)) {
    throw Error(ErrorKind::Validation, "driver file " + (dir / *driver).string() + " does not exist");
  }
  auto archive = archive_baseline_dir(dir);
  httplib::MultipartFormDataItems items{{"archive", archive, "baseline.lgar", "application/octet-stream"},
                                        {"description", description.format(), "", "text/plain"}};
  Call c(host_, port_, options_.timeout);
  last_uid_ = uid_from(expect(c.cli.Post("/experiment/sampled", items), "submit"));
  return *last_uid_;
}

StatusInfo Session::check_completion(const Uid& uid) {
  for (int attempt = 0;; ++attempt) {
    try {
      Call c(host_, port_, options_.timeout);
      auto res = expect(c.cli.Get("/experiment/" + uid.str() + "/status"), "status");
      auto j = json::parse(res.body);
      StatusInfo s;
      s.state = j.at("state").get<std::string>();
      s.fraction = j.at("fraction").get<double>();
      s.sims = j.value("sims", 0ull);
      s.failure_reason = j.value("failure_reason", "");
      const auto metrics = j.value("metrics", json::object());
      for (auto& [k, v] : metrics.items()) {
        s.metrics.set(k, v.is_number_float() ? format_double(v.get<double>()) : v.dump());
      }
      return s;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Transport || attempt >= options_.retries) throw;
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Transport, std::string("unexpected service reply: ") + e.what());
    }
    std::this_thread::sleep_for(options_.retry_backoff * (attempt + 1));
  }
}

std::string Session::fetch_results(const Uid& uid, const ResultQuery& query) {
  for (int attempt = 0;; ++attempt) {
    try {
      Call c(host_, port_, options_.timeout);
      return expect(c.cli.Get("/experiment/" + uid.str() + "/results" + query_string(query)), "results").body;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Transport || attempt >= options_.retries) throw;
    }
    std::this_thread::sleep_for(options_.retry_backoff * (attempt + 1));
  }
}

fs::path Session::get_results(const Uid& uid, const ResultQuery& query, const fs::path& dest) {
  auto files = gemt::unpack(fetch_results(uid, query));
  const auto out = dest / uid.str();
  fs::create_directories(out);
  for (const auto& [path, data] : files) {
    gemt::validate_entry_path(path);
    fs::create_directories((out / path).parent_path());
    write_file_atomic(out / path, data);
  }
  return out;
}

std::string Session::abort(const Uid& uid) {
  Call c(host_, port_, options_.timeout);
  auto res = expect(c.cli.Post("/experiment/" + uid.str() + "/abort", "", "text/plain"), "abort");
  try {
    return json::parse(res.body).at("state").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Transport, std::string("unexpected service reply: ") + e.what());
  }
}

}  // namespace lakegrid::client
