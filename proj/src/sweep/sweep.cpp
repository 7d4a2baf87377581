#include "lakegrid/sweep/sweep.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <random>

#include "lakegrid/common/error.hpp"

namespace lakegrid::sweep {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string lower(std::string_view s) {
  std::string out;
  for (char c : s) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

Error invalid(const std::string& field, const std::string& what) {
  return Error(ErrorKind::InvalidSpec, "field '" + field + "': " + what);
}

}  // namespace

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t index)
    : key_(splitmix64(seed) ^ splitmix64(index * 0xd1342543de82ef95ULL + 1)) {}

CounterRng::result_type CounterRng::operator()() { return splitmix64(key_ + counter_++); }

std::string_view to_string(SweepMode m) { return m == SweepMode::Linear ? "linear" : "sampled"; }

std::string_view to_string(Distribution d) {
  switch (d) {
    case Distribution::Uniform: return "uniform";
    case Distribution::Normal: return "normal";
    case Distribution::Binomial: return "binomial";
    case Distribution::Poisson: return "poisson";
  }
  return "unknown";
}

Distribution parse_distribution(std::string_view s) {
  auto l = lower(s);
  if (l == "uniform") return Distribution::Uniform;
  if (l == "normal" || l == "random") return Distribution::Normal;
  if (l == "binomial") return Distribution::Binomial;
  if (l == "poisson") return Distribution::Poisson;
  throw invalid("distribution", "unknown distribution '" + std::string(s) + "'");
}

KeyValues SweepSpec::to_kv() const {
  KeyValues kv;
  kv.set("driver_file", driver_file);
  kv.set("variable", variable);
  kv.set("mode", std::string(to_string(mode)));
  kv.set("count", std::to_string(count));
  kv.set("operation", std::string(lakegrid::to_string(operation)));
  kv.set("seed", std::to_string(seed));
  if (mode == SweepMode::Linear) {
    kv.set("start_value", format_double(start_value));
    kv.set("end_value", format_double(end_value));
    return kv;
  }
  kv.set("distribution", std::string(to_string(distribution)));
  switch (distribution) {
    case Distribution::Uniform:
      kv.set("a", format_double(params.a));
      kv.set("b", format_double(params.b));
      break;
    case Distribution::Normal:
      kv.set("mean", format_double(params.mean));
      kv.set("sd", format_double(params.sd));
      break;
    case Distribution::Binomial:
      kv.set("n", std::to_string(params.n));
      kv.set("p", format_double(params.p));
      break;
    case Distribution::Poisson:
      kv.set("lambda", format_double(params.lambda));
      break;
  }
  return kv;
}

SweepSpec SweepSpec::from_kv(const KeyValues& kv) {
  SweepSpec s;
  s.driver_file = kv.get("driver_file");
  s.variable = kv.get("variable");
  auto mode = lower(kv.get_or("mode", "linear"));
  if (mode == "linear") {
    s.mode = SweepMode::Linear;
  } else if (mode == "sampled") {
    s.mode = SweepMode::Sampled;
  } else {
    throw invalid("mode", "expected linear or sampled");
  }
  auto count = kv.get_int("count");
  if (count < 0) throw invalid("count", "must be >= 1");
  s.count = static_cast<std::uint64_t>(count);
  s.operation = parse_operation(kv.get_or("operation", "add"));
  s.seed = kv.has("seed") ? kv.get_uint("seed") : 0;
  if (s.mode == SweepMode::Linear) {
    s.start_value = kv.get_double("start_value");
    s.end_value = kv.get_double("end_value");
  } else {
    s.distribution = parse_distribution(kv.get("distribution"));
    switch (s.distribution) {
      case Distribution::Uniform:
        s.params.a = kv.get_double("a");
        s.params.b = kv.get_double("b");
        break;
      case Distribution::Normal:
        s.params.mean = kv.get_double_or("mean", 0.0);
        s.params.sd = kv.get_double_or("sd", 1.0);
        break;
      case Distribution::Binomial:
        s.params.n = kv.get_int("n");
        s.params.p = kv.get_double("p");
        break;
      case Distribution::Poisson:
        s.params.lambda = kv.get_double("lambda");
        break;
    }
  }
  return s;
}

void validate(const SweepSpec& spec) {
  if (spec.driver_file.empty()) throw invalid("driver_file", "must not be empty");
  if (spec.variable.empty()) throw invalid("variable", "must not be empty");
  if (spec.count < 1) throw invalid("count", "must be >= 1");
  if (spec.mode == SweepMode::Linear) {
    if (!std::isfinite(spec.start_value)) throw invalid("start_value", "must be finite");
    if (!std::isfinite(spec.end_value)) throw invalid("end_value", "must be finite");
  } else {
    const auto& p = spec.params;
    switch (spec.distribution) {
      case Distribution::Uniform:
        if (!std::isfinite(p.a)) throw invalid("a", "must be finite");
        if (!std::isfinite(p.b)) throw invalid("b", "must be finite");
        if (p.a > p.b) throw invalid("a", "uniform requires a <= b");
        break;
      case Distribution::Normal:
        if (!std::isfinite(p.mean)) throw invalid("mean", "must be finite");
        if (!std::isfinite(p.sd) || p.sd < 0) throw invalid("sd", "must be finite and >= 0");
        break;
      case Distribution::Binomial:
        if (p.n < 0) throw invalid("n", "must be >= 0");
        if (!(p.p >= 0 && p.p <= 1)) throw invalid("p", "binomial requires 0 <= p <= 1");
        break;
      case Distribution::Poisson:
        if (!(p.lambda > 0) || !std::isfinite(p.lambda)) throw invalid("lambda", "poisson requires lambda > 0");
        break;
    }
  }
  if (spec.operation == Operation::Divide && zero_offset_possible(spec)) {
    throw invalid("operation", "divide with a possible zero offset (zero-divisor policy)");
  }
}

bool zero_offset_possible(const SweepSpec& spec) {
  if (spec.mode == SweepMode::Linear) {
    for (double v : linear_offsets(spec.start_value, spec.end_value, spec.count)) {
      if (v == 0.0) return true;
    }
    return false;
  }
  const auto& p = spec.params;
  switch (spec.distribution) {
    case Distribution::Uniform: return p.a <= 0.0 && 0.0 <= p.b;
    // A continuous normal hits exactly 0 with probability zero; only the
    // degenerate point mass at 0 is refused.
    case Distribution::Normal: return p.sd == 0.0 && p.mean == 0.0;
    case Distribution::Binomial: return p.n == 0 || p.p < 1.0;
    case Distribution::Poisson: return true;
  }
  return true;
}

std::vector<double> linear_offsets(double start, double end, std::uint64_t count) {
  if (count == 0) throw invalid("count", "must be >= 1");
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = start;
    return out;
  }
  // Rounding t = i/(n-1) first costs up to ~1e-12 relative error near a zero
  // crossing; one extended-precision expression rounds once at the end and
  // stays monotone in i.
  const long double a = start, span = static_cast<long double>(end) - a;
  const long double denom = static_cast<long double>(count - 1);
  for (std::uint64_t i = 0; i < count; ++i) {
    out[i] = static_cast<double>(a + span * static_cast<long double>(i) / denom);
  }
  out.front() = start;
  out.back() = end;
  return out;
}

std::vector<double> sample_offsets(const SweepSpec& spec) {
  if (spec.mode != SweepMode::Sampled) throw invalid("mode", "sample_offsets requires sampled mode");
  validate(spec);
  std::vector<double> out;
  out.reserve(spec.count);
  const auto& p = spec.params;
  for (std::uint64_t i = 0; i < spec.count; ++i) {
    CounterRng rng(spec.seed, i);
    double v = 0;
    switch (spec.distribution) {
      case Distribution::Uniform:
        v = p.a == p.b ? p.a : std::uniform_real_distribution<double>(p.a, p.b)(rng);
        break;
      case Distribution::Normal:
        v = p.sd == 0 ? p.mean : std::normal_distribution<double>(p.mean, p.sd)(rng);
        break;
      case Distribution::Binomial:
        v = static_cast<double>(std::binomial_distribution<std::int64_t>(p.n, p.p)(rng));
        break;
      case Distribution::Poisson:
        v = static_cast<double>(std::poisson_distribution<std::int64_t>(p.lambda)(rng));
        break;
    }
    out.push_back(v);
  }
  return out;
}

std::vector<double> offsets_for(const SweepSpec& spec) {
  return spec.mode == SweepMode::Linear ? linear_offsets(spec.start_value, spec.end_value, spec.count)
                                        : sample_offsets(spec);
}

double apply_operation(double value, Operation op, double offset) {
  switch (op) {
    case Operation::Add: return value + offset;
    case Operation::Subtract: return value - offset;
    case Operation::Multiply: return value * offset;
    case Operation::Divide:
      if (offset == 0.0) throw invalid("operation", "divide by zero offset");
      return value / offset;
  }
  return value;
}

DriverTable apply_offset(const DriverTable& table, std::string_view variable, Operation op,
                         double offset) {
  auto col = table.column_index(variable);
  if (col == 0) throw invalid("variable", "the timestamp column cannot be transformed");
  if (op == Operation::Divide && offset == 0.0) throw invalid("operation", "divide by zero offset");
  DriverTable out = table;
  for (std::size_t r = 0; r < table.row_count(); ++r) {
    double before = table.value(r, col);
    double after = apply_operation(before, op, offset);
    // Values the operation leaves bit-identical keep their original text.
    if (std::bit_cast<std::uint64_t>(before) == std::bit_cast<std::uint64_t>(after)) continue;
    out.set_cell(r, col, format_double(after));
  }
  return out;
}

std::vector<SimulationSpec> expand(const InputSet& baseline, const SweepSpec& spec) {
  validate(spec);
  auto it = baseline.find(spec.driver_file);
  if (it == baseline.end() || !it->second) {
    throw Error(ErrorKind::InvalidSpec,
                "field 'driver_file': baseline has no file '" + spec.driver_file + "'");
  }
  auto table = DriverTable::parse(*it->second, spec.driver_file);
  if (!table.has_column(spec.variable)) {
    throw Error(ErrorKind::InvalidSpec, spec.driver_file + ": unknown column '" + spec.variable +
                                            "' (field 'variable')");
  }

  auto offsets = offsets_for(spec);
  if (spec.operation == Operation::Divide) {
    for (double o : offsets) {
      if (o == 0.0) throw invalid("operation", "divide with a drawn offset of 0 (zero-divisor policy)");
    }
  }

  std::vector<SimulationSpec> sims;
  sims.reserve(offsets.size());
  for (std::uint64_t i = 0; i < offsets.size(); ++i) {
    SimulationSpec sim;
    sim.sim_id = i;
    sim.input_files = baseline;
    auto rewritten = apply_offset(table, spec.variable, spec.operation, offsets[i]);
    if (!(rewritten == table)) sim.input_files[spec.driver_file] = share(rewritten.to_csv());
    sim.provenance = Provenance{false, spec.variable, spec.operation, offsets[i]};
    if (i == 0) sim.validate();
    sims.push_back(std::move(sim));
  }
  return sims;
}

}  // namespace lakegrid::sweep
