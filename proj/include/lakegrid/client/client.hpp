#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/kv.hpp"
#include "lakegrid/domain/uid.hpp"

namespace lakegrid::client {

// The service answered with an error status; what() is its message.
class ServerRejection : public Error {
 public:
  ServerRejection(ErrorKind kind, int status, const std::string& message) : Error(kind, message), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

struct ClientOptions {
  std::string service_url;  // http://host:port
  std::chrono::milliseconds timeout{30000};
  int retries = 3;  // status and results only
  std::chrono::milliseconds retry_backoff{200};
};

struct StatusInfo {
  std::string state;
  double fraction = 0;
  std::uint64_t sims = 0;
  std::string failure_reason;
  KeyValues metrics;

  bool terminal() const { return state == "COMPLETED" || state == "FAILED" || state == "ABORTED"; }
};

struct ResultQuery {
  std::optional<std::set<std::uint64_t>> sims;
  std::vector<std::string> columns;
};

/// Client for the experiment service. Local problems (bad directory, bad
/// arguments) raise Error(Validation) before any request is sent; a
/// connection failure raises Error(Transport); a server rejection raises
/// ServerRejection with the server's message.
class Session {
 public:
  // Throws Error(Validation) for a malformed URL.
  explicit Session(ClientOptions options);

  // `dir` holds one subdirectory per simulation.
  Uid run_experiment(const std::filesystem::path& dir);
  // `dir` holds the baseline files, including `driver_file`.
  Uid run_sweep(const std::filesystem::path& dir, const std::string& driver_file, const std::string& parameter,
                double start, double end, std::int64_t count);
  Uid run_sampled(const std::filesystem::path& dir, const KeyValues& description);

  StatusInfo check_completion(const Uid& uid);
  // Downloads and unpacks under dest/{uid}/; returns that directory.
  std::filesystem::path get_results(const Uid& uid, const ResultQuery& query, const std::filesystem::path& dest);
  // Raw archive bytes.
  std::string fetch_results(const Uid& uid, const ResultQuery& query);
  std::string abort(const Uid& uid);

  const std::optional<Uid>& last_uid() const { return last_uid_; }
  const ClientOptions& options() const { return options_; }

 private:
  ClientOptions options_;
  std::string host_;
  int port_ = 0;
  std::optional<Uid> last_uid_;
};

// Archives every file under each subdirectory of `dir` as "sub/file".
std::string archive_experiment_dir(const std::filesystem::path& dir);
// Archives the regular files directly in `dir`.
std::string archive_baseline_dir(const std::filesystem::path& dir);

// Exit codes of the command line tool.
enum ExitCode { kOk = 0, kUsage = 1, kTransport = 2, kRejected = 3, kInProgress = 4 };

// The `lakegrid` command line; key=value lines go to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lakegrid::client
