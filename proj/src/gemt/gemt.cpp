#include "lakegrid/gemt/gemt.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <system_error>

#include "lakegrid/common/clock.hpp"
#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"
#include "lakegrid/common/kv.hpp"
#include "lakegrid/model/lake_model.hpp"
#include "lakegrid/sweep/driver_table.hpp"

namespace lakegrid::gemt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sim_dir_name(std::uint64_t sim_id) { return std::to_string(sim_id); }

std::string entry_path(std::uint64_t sim_id, const std::string& file) {
  return sim_dir_name(sim_id) + "/" + file;
}

std::vector<std::string> expected_outputs() { return {std::string(model::kOutputFile)}; }

void remove_tree(const fs::path& p) {
  std::error_code ec;
  fs::remove_all(p, ec);
  if (ec) throw Error(ErrorKind::Internal, "cannot clean scratch " + p.string() + ": " + ec.message());
}

}  // namespace

void GemtConfig::validate() const {
  if (group_size < 1) throw Error(ErrorKind::InvalidSpec, "field 'group_size' must be at least 1");
  if (max_archive_bytes == 0) {
    throw Error(ErrorKind::InvalidSpec, "field 'max_archive_bytes' must be positive");
  }
}

std::string GemtConfig::to_text() const {
  KeyValues kv;
  kv.set("group_size", std::to_string(group_size));
  kv.set("compress", compress ? "true" : "false");
  kv.set("pipeline_packaging", pipeline_packaging ? "true" : "false");
  kv.set("feature_filter", join(feature_filter, ","));
  kv.set("max_archive_bytes", std::to_string(max_archive_bytes));
  return kv.format();
}

GemtConfig GemtConfig::parse(std::string_view text) {
  auto kv = KeyValues::parse(text);
  GemtConfig cfg;
  auto k = kv.get_int_or("group_size", cfg.group_size);
  if (k < 1 || k > 1'000'000) throw Error(ErrorKind::InvalidSpec, "field 'group_size' must be at least 1");
  cfg.group_size = static_cast<std::uint32_t>(k);
  cfg.compress = kv.get_bool_or("compress", cfg.compress);
  cfg.pipeline_packaging = kv.get_bool_or("pipeline_packaging", cfg.pipeline_packaging);
  cfg.feature_filter = kv.get_list_or("feature_filter", {});
  if (kv.has("max_archive_bytes")) cfg.max_archive_bytes = kv.get_uint("max_archive_bytes");
  cfg.validate();
  return cfg;
}

void JobManifest::validate() const {
  if (job_id.empty()) throw Error(ErrorKind::Input, "manifest has no job_id");
  std::set<std::uint64_t> seen;
  for (const auto& e : sims) {
    if (!seen.insert(e.sim_id).second) {
      throw Error(ErrorKind::Input, "manifest lists sim " + std::to_string(e.sim_id) + " twice");
    }
    try {
      validate_entry_path(e.dir);
      for (const auto& f : e.inputs) validate_entry_path(e.dir + "/" + f);
      for (const auto& f : e.expected_outputs) validate_entry_path(e.dir + "/" + f);
    } catch (const Error& err) {
      throw Error(ErrorKind::Input, std::string("manifest: ") + err.what());
    }
  }
}

std::string JobManifest::to_meta() const {
  json j;
  j["job_id"] = job_id;
  j["toolchain_version"] = toolchain_version;
  j["sims"] = json::array();
  for (const auto& e : sims) {
    j["sims"].push_back({{"sim_id", e.sim_id},
                         {"dir", e.dir},
                         {"inputs", e.inputs},
                         {"expected_outputs", e.expected_outputs}});
  }
  return j.dump(1);
}

JobManifest JobManifest::parse(std::string_view text) {
  JobManifest m;
  try {
    auto j = json::parse(text);
    m.job_id = j.at("job_id").get<std::string>();
    m.toolchain_version = j.at("toolchain_version").get<std::string>();
    for (const auto& s : j.at("sims")) {
      ManifestEntry e;
      e.sim_id = s.at("sim_id").get<std::uint64_t>();
      e.dir = s.at("dir").get<std::string>();
      e.inputs = s.at("inputs").get<std::vector<std::string>>();
      e.expected_outputs = s.at("expected_outputs").get<std::vector<std::string>>();
      m.sims.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Input, std::string("corrupt manifest: ") + e.what());
  }
  if (m.toolchain_version != kToolchainVersion) {
    throw Error(ErrorKind::Input, "manifest toolchain version '" + m.toolchain_version + "' unsupported");
  }
  m.validate();
  return m;
}

std::vector<std::vector<std::size_t>> partition(std::size_t sim_count, std::uint32_t group_size) {
  if (group_size < 1) throw Error(ErrorKind::InvalidSpec, "field 'group_size' must be at least 1");
  std::vector<std::vector<std::size_t>> out;
  out.reserve((sim_count + group_size - 1) / group_size);
  for (std::size_t start = 0; start < sim_count; start += group_size) {
    std::vector<std::size_t> g;
    for (std::size_t i = start; i < std::min(sim_count, start + group_size); ++i) g.push_back(i);
    out.push_back(std::move(g));
  }
  return out;
}

std::string package(const std::string& job_id, std::span<const SimulationSpec> members,
                    const GemtConfig& cfg) {
  JobManifest manifest;
  manifest.job_id = job_id;
  ArchiveBuilder builder(cfg.archive_options());
  for (const auto& sim : members) {
    if (sim.input_files.empty()) {
      throw Error(ErrorKind::Packaging, "sim " + std::to_string(sim.sim_id) + " has no input files");
    }
    ManifestEntry e;
    e.sim_id = sim.sim_id;
    e.dir = sim_dir_name(sim.sim_id);
    e.expected_outputs = expected_outputs();
    for (const auto& [name, data] : sim.input_files) {
      builder.add(entry_path(sim.sim_id, name), data);
      e.inputs.push_back(name);
    }
    manifest.sims.push_back(std::move(e));
  }
  manifest.validate();
  builder.add(std::string(kManifestFile), manifest.to_meta());
  return builder.build();
}

JobBundle make_bundle(const JobId& id, std::span<const SimulationSpec> members, const GemtConfig& cfg) {
  JobBundle b{id, {}, {}, JobStatus::Queued};
  for (const auto& s : members) b.sim_ids.push_back(s.sim_id);
  b.archive = package(id.str(), members, cfg);
  return b;
}

void group_streaming(const Uid& uid, std::span<const SimulationSpec> sims, const GemtConfig& cfg,
                     const std::function<void(JobBundle&&)>& sink, EventLog* log) {
  if (sims.empty()) throw Error(ErrorKind::Contract, "cannot group an empty simulation list");
  cfg.validate();
  auto groups = partition(sims.size(), cfg.group_size);
  std::vector<JobBundle> held;
  for (std::size_t j = 0; j < groups.size(); ++j) {
    auto members = sims.subspan(groups[j].front(), groups[j].size());
    auto bundle = make_bundle(JobId{uid, static_cast<std::uint32_t>(j)}, members, cfg);
    if (log) log->append(wall_now().time_since_epoch().count(), "gemt", "bundle_packaged", bundle.job_id.str());
    if (cfg.pipeline_packaging) {
      sink(std::move(bundle));
    } else {
      held.push_back(std::move(bundle));
    }
  }
  for (auto& b : held) sink(std::move(b));
}

std::vector<JobBundle> group(const Uid& uid, std::span<const SimulationSpec> sims, const GemtConfig& cfg) {
  std::vector<JobBundle> out;
  group_streaming(uid, sims, cfg, [&](JobBundle&& b) { out.push_back(std::move(b)); });
  return out;
}

UnpackedJob unpack_job(std::string archive) {
  ArchiveReader reader(std::move(archive));
  if (!reader.contains(std::string(kManifestFile))) {
    throw Error(ErrorKind::Input, "archive has no manifest");
  }
  UnpackedJob job;
  job.manifest = JobManifest::parse(reader.read(std::string(kManifestFile)));
  for (const auto& e : job.manifest.sims) {
    auto& files = job.inputs[e.sim_id];
    for (const auto& f : e.inputs) {
      auto path = e.dir + "/" + f;
      if (!reader.contains(path)) throw Error(ErrorKind::Input, "archive is missing '" + path + "'");
      files.emplace(f, reader.read(path));
    }
  }
  return job;
}

ModelRunner lake_model_runner(std::optional<std::int64_t> emulate_ms_override) {
  return [emulate_ms_override](const fs::path& dir) {
    std::vector<fs::path> params;
    for (const auto& ent : fs::directory_iterator(dir)) {
      if (ent.is_regular_file() && is_parameter_file(ent.path().filename().string())) {
        params.push_back(ent.path());
      }
    }
    if (params.size() != 1) {
      throw Error(ErrorKind::Input, "expected exactly one parameter file, found " + std::to_string(params.size()));
    }
    auto p = model::LakeParams::parse(read_file(params.front()));
    auto driver = sweep::DriverTable::parse(read_file(dir / p.met_file), p.met_file);
    auto out = model::run_model(p, driver, emulate_ms_override);
    write_file(dir / model::kOutputFile, out.to_csv());
  };
}

JobResult run_job(const std::string& job_id, std::string archive, const ModelRunner& runner,
                  const fs::path& scratch_root, const std::atomic<bool>* cancel) {
  JobResult result;
  result.job_id = job_id;
  UnpackedJob job;
  try {
    job = unpack_job(std::move(archive));
    if (job.manifest.job_id != job_id) {
      throw Error(ErrorKind::Input, "archive belongs to job '" + job.manifest.job_id + "'");
    }
  } catch (const Error& e) {
    result.job_error = e.what();
    return result;
  }

  const fs::path job_dir = scratch_root / job_id;
  remove_tree(job_dir);
  fs::create_directories(job_dir);

  for (const auto& entry : job.manifest.sims) {
    SimOutcome o;
    o.sim_id = entry.sim_id;
    if (cancel && cancel->load()) {
      o.reason = "cancelled";
      result.sims.push_back(std::move(o));
      continue;
    }
    const fs::path dir = job_dir / entry.dir;
    try {
      fs::create_directories(dir);
      for (const auto& [name, data] : job.inputs.at(entry.sim_id)) write_file(dir / name, data);
      runner(dir);
      for (const auto& out : entry.expected_outputs) {
        if (!fs::exists(dir / out)) throw Error(ErrorKind::Internal, "missing output '" + out + "'");
        o.outputs.emplace(out, read_file(dir / out));
      }
      o.ok = true;
    } catch (const std::exception& e) {
      o.ok = false;
      o.outputs.clear();
      o.reason = e.what();
    }
    result.sims.push_back(std::move(o));
  }

  remove_tree(job_dir);
  result.job_ok = true;
  return result;
}

std::string result_archive_name(const std::string& job_id) { return job_id + ".out"; }

std::string result_archive(const JobResult& result, bool compress) {
  ArchiveBuilder b(ArchiveOptions{compress, ~0ull});
  json meta{{"job_id", result.job_id}, {"ok", result.job_ok}, {"error", result.job_error}};
  meta["sims"] = json::array();
  for (const auto& s : result.sims) {
    meta["sims"].push_back(s.sim_id);
    b.add(entry_path(s.sim_id, std::string(kStatusFile)), s.ok ? std::string("ok") : "failed: " + s.reason);
    for (const auto& [name, data] : s.outputs) b.add(entry_path(s.sim_id, name), data);
  }
  b.add(std::string(kJobMetaFile), meta.dump());
  return b.build();
}

JobResult parse_result_archive(std::string archive) {
  ArchiveReader reader(std::move(archive));
  JobResult r;
  std::vector<std::uint64_t> ids;
  try {
    auto meta = json::parse(reader.read(std::string(kJobMetaFile)));
    r.job_id = meta.at("job_id").get<std::string>();
    r.job_ok = meta.at("ok").get<bool>();
    r.job_error = meta.at("error").get<std::string>();
    ids = meta.at("sims").get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Input, std::string("corrupt job.meta: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::Input, std::string("corrupt result archive: ") + e.what());
  }
  for (auto id : ids) {
    SimOutcome o;
    o.sim_id = id;
    auto prefix = sim_dir_name(id) + "/";
    auto status_path = prefix + std::string(kStatusFile);
    if (!reader.contains(status_path)) throw Error(ErrorKind::Input, "result archive lacks " + status_path);
    auto status = reader.read(status_path);
    if (status == "ok") {
      o.ok = true;
    } else if (status.rfind("failed: ", 0) == 0) {
      o.reason = status.substr(8);
    } else {
      throw Error(ErrorKind::Input, "bad status for sim " + std::to_string(id));
    }
    for (const auto& p : reader.paths()) {
      if (p.rfind(prefix, 0) == 0 && p != status_path) o.outputs.emplace(p.substr(prefix.size()), reader.read(p));
    }
    r.sims.push_back(std::move(o));
  }
  return r;
}

namespace {

std::string apply_filter(const std::string& csv, const std::vector<std::string>& columns) {
  return model::extract_features(model::LakeOutput::parse_csv(csv), columns).to_csv();
}

// Columns of `t` in the order named; every name is present in t.header.
model::FeatureTable select_columns(const model::FeatureTable& t, const std::vector<std::string>& names) {
  std::vector<std::size_t> idx;
  for (const auto& n : names) {
    auto it = std::find(t.header.begin(), t.header.end(), n);
    if (it != t.header.end() && std::find(idx.begin(), idx.end(), it - t.header.begin()) == idx.end()) {
      idx.push_back(static_cast<std::size_t>(it - t.header.begin()));
    }
  }
  model::FeatureTable out;
  for (auto i : idx) out.header.push_back(t.header[i]);
  for (const auto& r : t.rows) {
    std::vector<std::string> cells;
    for (auto i : idx) cells.push_back(r[i]);
    out.rows.push_back(std::move(cells));
  }
  return out;
}

}  // namespace

CollatedResults collate(const Uid& uid, std::span<const JobOutcome> jobs, const GemtConfig& cfg) {
  CollatedResults res(uid);
  res.feature_filter = cfg.feature_filter;
  std::set<std::uint64_t> seen;
  auto fail = [&](std::uint64_t id, std::string reason) {
    res.failed_sims.push_back({id, std::move(reason)});
  };

  for (const auto& job : jobs) {
    for (auto id : job.sim_ids) {
      if (!seen.insert(id).second) {
        throw Error(ErrorKind::Contract, "sim " + std::to_string(id) + " appears in two jobs");
      }
    }
    if (!job.result_archive) {
      auto reason = job.failure_reason.empty() ? std::string(kLostReason) : job.failure_reason;
      for (auto id : job.sim_ids) fail(id, reason);
      continue;
    }
    JobResult r;
    try {
      r = parse_result_archive(*job.result_archive);
    } catch (const Error& e) {
      for (auto id : job.sim_ids) fail(id, std::string("unreadable result: ") + e.what());
      continue;
    }
    std::map<std::uint64_t, const SimOutcome*> by_id;
    for (const auto& s : r.sims) by_id[s.sim_id] = &s;
    for (auto id : job.sim_ids) {
      if (!r.job_ok) {
        fail(id, r.job_error.empty() ? "job failed" : r.job_error);
        continue;
      }
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        fail(id, "missing from job result");
        continue;
      }
      const auto& s = *it->second;
      if (!s.ok) {
        fail(id, s.reason);
        continue;
      }
      auto outputs = s.outputs;
      if (!cfg.feature_filter.empty()) {
        auto out = outputs.find(std::string(model::kOutputFile));
        if (out == outputs.end()) {
          fail(id, "missing output 'lake_output.csv'");
          continue;
        }
        try {
          out->second = apply_filter(out->second, cfg.feature_filter);
        } catch (const Error& e) {
          fail(id, std::string("feature extraction failed: ") + e.what());
          continue;
        }
      }
      res.outputs.emplace(id, std::move(outputs));
    }
  }

  std::sort(res.failed_sims.begin(), res.failed_sims.end(),
            [](const FailedSim& a, const FailedSim& b) { return a.sim_id < b.sim_id; });
  res.summary.total = seen.size();
  res.summary.succeeded = res.outputs.size();
  res.summary.failed = res.failed_sims.size();
  return res;
}

std::string results_archive(const CollatedResults& results, bool compress) {
  ArchiveBuilder b(ArchiveOptions{compress, ~0ull});
  for (const auto& [id, files] : results.outputs) {
    for (const auto& [name, data] : files) b.add(entry_path(id, name), data);
  }
  json summary{{"uid", results.uid.str()},
               {"total", results.summary.total},
               {"succeeded", results.summary.succeeded},
               {"failed", results.summary.failed},
               {"feature_filter", results.feature_filter}};
  summary["failed_sims"] = json::array();
  for (const auto& f : results.failed_sims) summary["failed_sims"].push_back({{"sim_id", f.sim_id}, {"reason", f.reason}});
  b.add(std::string(kSummaryFile), summary.dump(1));
  return b.build();
}

std::string filter_results(std::string archive, const ResultFilter& filter, bool compress) {
  ArchiveReader reader(std::move(archive));
  bool full_outputs = true;
  if (reader.contains(std::string(kSummaryFile))) {
    try {
      auto summary = json::parse(reader.read(std::string(kSummaryFile)));
      full_outputs = summary.value("feature_filter", json::array()).empty();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Input, std::string("corrupt summary.meta: ") + e.what());
    }
  }
  ArchiveBuilder b(ArchiveOptions{compress, ~0ull});
  for (const auto& p : reader.paths()) {
    if (p == kSummaryFile) {
      b.add(p, reader.read(p));
      continue;
    }
    auto slash = p.find('/');
    if (slash == std::string::npos) continue;
    auto id = parse_int(std::string_view(p).substr(0, slash));
    if (!id || *id < 0) continue;
    if (filter.sims && !filter.sims->count(static_cast<std::uint64_t>(*id))) continue;
    auto data = reader.read(p);
    if (!filter.columns.empty() && p.substr(slash + 1) == model::kOutputFile) {
      // The time key is only kept when asked for, so the table holds
      // exactly the requested columns.
      std::vector<std::string> values;
      for (const auto& c : filter.columns) {
        if (c != "time") values.push_back(c);
      }
      auto table = model::FeatureTable::parse_csv(data);
      model::FeatureTable projected;
      try {
        projected = table.project(values);
      } catch (const Error& e) {
        // Derived columns can only be computed from the full layer table.
        if (!full_outputs) throw Error(ErrorKind::Validation, e.what());
        try {
          projected = model::FeatureTable::parse_csv(apply_filter(data, values));
        } catch (const Error& e) {
          throw Error(ErrorKind::Validation, e.what());
        }
      }
      data = select_columns(projected, filter.columns).to_csv();
    }
    b.add(p, std::move(data));
  }
  return b.build();
}

}  // namespace lakegrid::gemt
