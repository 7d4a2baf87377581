#include <CLI11.hpp>

#include <ostream>

#include "lakegrid/client/client.hpp"
#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"

namespace lakegrid::client {

namespace {

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ServerRejection*>(&e)) return kRejected;
  switch (e.kind()) {
    case ErrorKind::Validation:
    case ErrorKind::InvalidSpec:
      return kUsage;
    case ErrorKind::Transport:
    case ErrorKind::Connectivity:
      return kTransport;
    default:
      return kRejected;
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& p : split(s, ',')) {
    if (auto t = trim(p); !t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Submit and track lake model experiments"};
  app.require_subcommand(1);
  std::string url = "http://127.0.0.1:8080";
  int timeout_ms = 30000;
  app.add_option("--url", url, "Service URL (http://host:port)");
  app.add_option("--timeout-ms", timeout_ms, "Per-request timeout")->check(CLI::PositiveNumber);

  std::string dir, driver, parameter, description, uid_text, dest = ".", sims, columns;
  double start = 0, end = 0;
  std::int64_t count = 0;

  auto* run = app.add_subcommand("run", "Upload a directory of simulation subdirectories");
  run->add_option("--dir,--exp-dir", dir, "Experiment directory")->required();

  auto* sweep = app.add_subcommand("sweep", "Sweep one driver variable over a linear range");
  sweep->add_option("--dir,--sim-dir", dir, "Baseline input directory")->required();
  sweep->add_option("--driver-file-name", driver, "Driver file to modify")->required();
  sweep->add_option("--parameter-name", parameter, "Driver column to modify")->required();
  sweep->add_option("--start-value", start, "First offset")->required();
  sweep->add_option("--end-value", end, "Last offset")->required();
  sweep->add_option("--number-of-increments", count, "Number of simulations")->required();

  auto* sample = app.add_subcommand("sample", "Draw offsets from a distribution");
  sample->add_option("--dir,--sim-dir", dir, "Baseline input directory")->required();
  sample->add_option("--description", description, "key=value description file")->required();

  auto* status = app.add_subcommand("status", "Check experiment completion");
  status->add_option("--uid", uid_text, "Experiment UID")->required();

  auto* results = app.add_subcommand("results", "Download experiment results");
  results->add_option("--uid", uid_text, "Experiment UID")->required();
  results->add_option("--dest", dest, "Destination directory");
  results->add_option("--sims", sims, "Comma separated simulation ids");
  results->add_option("--columns", columns, "Comma separated output columns");

  auto* abort = app.add_subcommand("abort", "Abort an experiment");
  abort->add_option("--uid", uid_text, "Experiment UID")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    ClientOptions opts;
    opts.service_url = url;
    opts.timeout = std::chrono::milliseconds(timeout_ms);
    Session session(opts);

    if (*run || *sweep || *sample) {
      Uid uid = Uid::generate();
      if (*run) {
        uid = session.run_experiment(dir);
      } else if (*sweep) {
        uid = session.run_sweep(dir, driver, parameter, start, end, count);
      } else {
        if (!std::filesystem::is_regular_file(description)) {
          throw Error(ErrorKind::Validation, "description file " + description + " does not exist");
        }
        uid = session.run_sampled(dir, KeyValues::parse(read_file(description)));
      }
      out << "uid=" << uid.str() << "\n";
      return kOk;
    }

    const Uid uid = Uid::parse(uid_text);
    if (*status) {
      auto s = session.check_completion(uid);
      out << "uid=" << uid.str() << "\nstate=" << s.state << "\nfraction=" << format_double(s.fraction)
          << "\nsims=" << s.sims << "\n";
      for (const auto& [k, v] : s.metrics.items()) out << k << "=" << v << "\n";
      if (!s.failure_reason.empty()) out << "failure_reason=" << s.failure_reason << "\n";
      return s.terminal() ? kOk : kInProgress;
    }
    if (*results) {
      ResultQuery q;
      if (!sims.empty()) {
        std::set<std::uint64_t> ids;
        for (const auto& p : split_list(sims)) {
          auto v = parse_int(p);
          if (!v || *v < 0) throw Error(ErrorKind::Validation, "--sims: '" + p + "' is not a simulation id");
          ids.insert(static_cast<std::uint64_t>(*v));
        }
        q.sims = std::move(ids);
      }
      q.columns = split_list(columns);
      auto path = session.get_results(uid, q, dest);
      out << "uid=" << uid.str() << "\npath=" << path.string() << "\n";
      return kOk;
    }
    auto state = session.abort(uid);
    out << "uid=" << uid.str() << "\nstate=" << state << "\n";
    return kOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRejected;
  }
}

}  // namespace lakegrid::client
