#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "lakegrid/common/bytes.hpp"
#include "lakegrid/common/kv.hpp"
#include "lakegrid/domain/experiment.hpp"
#include "lakegrid/sweep/driver_table.hpp"

namespace lakegrid::sweep {

enum class SweepMode { Linear, Sampled };
enum class Distribution { Uniform, Normal, Binomial, Poisson };

std::string_view to_string(SweepMode m);
std::string_view to_string(Distribution d);
// Accepts "random" as an alias for the normal distribution.
Distribution parse_distribution(std::string_view s);

struct DistributionParams {
  double a = 0, b = 0;            // uniform
  double mean = 0, sd = 1;        // normal
  std::int64_t n = 1;             // binomial trials
  double p = 0.5;                 // binomial success probability
  double lambda = 1;              // poisson
};

struct SweepSpec {
  std::string driver_file;
  std::string variable;
  SweepMode mode = SweepMode::Linear;
  double start_value = 0;
  double end_value = 0;
  std::uint64_t count = 1;
  Distribution distribution = Distribution::Normal;
  DistributionParams params;
  Operation operation = Operation::Add;
  std::uint64_t seed = 0;

  // Flat wire form, field names as above plus a, b, mean, sd, n, p, lambda.
  KeyValues to_kv() const;
  static SweepSpec from_kv(const KeyValues& kv);
};

// Throws Error(InvalidSpec) naming the offending field. Does not look at the
// baseline files; see expand() for column checks.
void validate(const SweepSpec& spec);

// True when the offsets a SweepSpec can produce may include 0; used to refuse
// DIVIDE before any generation work is done.
bool zero_offset_possible(const SweepSpec& spec);

/// Inclusive arithmetic progression from start to end with exact endpoints.
std::vector<double> linear_offsets(double start, double end, std::uint64_t count);

/// `spec.count` draws; draw i depends only on (seed, i).
std::vector<double> sample_offsets(const SweepSpec& spec);

std::vector<double> offsets_for(const SweepSpec& spec);

double apply_operation(double value, Operation op, double offset);

DriverTable apply_offset(const DriverTable& table, std::string_view variable, Operation op,
                         double offset);

using InputSet = std::map<std::string, SharedBytes>;

/// Derives spec.count simulations from one baseline input set.
std::vector<SimulationSpec> expand(const InputSet& baseline, const SweepSpec& spec);

/// URBG keyed by (seed, draw index): each draw owns an independent stream,
/// so results do not depend on the order draws are taken in.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t index);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace lakegrid::sweep
