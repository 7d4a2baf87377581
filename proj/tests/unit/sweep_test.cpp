#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "lakegrid/common/error.hpp"
#include "lakegrid/sweep/sweep.hpp"

using namespace lakegrid;
using namespace lakegrid::sweep;

namespace {

const char* kMet =
    "time,AirTemp,ShortWave,RelHum\n"
    "2015-04-01 00:00,5.0,0,81.5\n"
    "2015-04-01 01:00,6.5,12.25,80\n"
    "2015-04-01 02:00,7.125,40.5,78.0\n";

InputSet baseline() {
  return {{"lake.nml", share("depth_layers=3\n")}, {"met_hourly.csv", share(kMet)}};
}

SweepSpec linear(double start, double end, std::uint64_t count) {
  SweepSpec s;
  s.driver_file = "met_hourly.csv";
  s.variable = "AirTemp";
  s.start_value = start;
  s.end_value = end;
  s.count = count;
  return s;
}

// Independent row-wise recomputation: split the CSV text by hand and add.
std::vector<std::string> column_cells(const std::string& csv, std::size_t col) {
  std::vector<std::string> out;
  std::size_t line_start = csv.find('\n') + 1;
  while (line_start < csv.size()) {
    auto end = csv.find('\n', line_start);
    auto line = csv.substr(line_start, end - line_start);
    std::size_t c = 0, pos = 0;
    while (c < col) {
      pos = line.find(',', pos) + 1;
      ++c;
    }
    out.push_back(line.substr(pos, line.find(',', pos) - pos));
    line_start = end + 1;
  }
  return out;
}

}  // namespace

TEST(LinearOffsets, SmallProgression) {
  EXPECT_EQ(linear_offsets(-10, 30, 5), (std::vector<double>{-10, 0, 10, 20, 30}));
}

TEST(LinearOffsets, DegenerateEqualEndpoints) {
  EXPECT_EQ(linear_offsets(7, 7, 3), (std::vector<double>{7, 7, 7}));
}

TEST(LinearOffsets, SingleCountIsStart) {
  EXPECT_EQ(linear_offsets(-3.5, 9, 1), (std::vector<double>{-3.5}));
}

TEST(LinearOffsets, ZeroCountIsInvalid) {
  try {
    linear_offsets(0, 1, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidSpec);
  }
}

TEST(LinearOffsets, TenThousandStepsExactEndpointsMonotone) {
  auto v = linear_offsets(-10, 30, 10000);
  ASSERT_EQ(v.size(), 10000u);
  EXPECT_EQ(v.front(), -10.0);
  EXPECT_EQ(v.back(), 30.0);
  for (std::size_t i = 1; i < v.size(); ++i) EXPECT_LE(v[i - 1], v[i]);
}

// Property: endpoints exact and order monotone for arbitrary ranges.
TEST(LinearOffsets, EndpointsExactForRandomRanges) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> val(-1e6, 1e6);
  for (int i = 0; i < 500; ++i) {
    double a = val(rng), b = val(rng);
    auto n = rng() % 5000 + 2;
    auto v = linear_offsets(a, b, n);
    EXPECT_EQ(v.front(), a);
    EXPECT_EQ(v.back(), b);
    for (std::size_t k = 1; k < v.size(); ++k) {
      if (a <= b) {
        EXPECT_LE(v[k - 1], v[k]);
      } else {
        EXPECT_GE(v[k - 1], v[k]);
      }
    }
  }
}

// Oracle: exact rational (a*(n-1-i) + b*i)/(n-1) with an integer numerator.
TEST(LinearOffsets, InteriorWithinOneInTenToTheTwelveRelative) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t a = static_cast<std::int64_t>(rng() % 2001) - 1000;
    const std::int64_t b = static_cast<std::int64_t>(rng() % 2001) - 1000;
    const std::uint64_t n = rng() % 20000 + 2;
    auto v = linear_offsets(static_cast<double>(a), static_cast<double>(b), n);
    const auto d = static_cast<std::int64_t>(n - 1);
    for (std::uint64_t i = 1; i + 1 < n; ++i) {
      const auto k = static_cast<std::int64_t>(i);
      const auto num = a * (d - k) + b * k;
      if (num == 0) {
        ASSERT_EQ(v[i], 0.0);
        continue;
      }
      const long double want = static_cast<long double>(num) / static_cast<long double>(d);
      ASSERT_LE(std::fabs((v[i] - want) / want), 1e-12L) << a << ".." << b << " n=" << n << " i=" << i;
    }
  }
}

TEST(SampleOffsets, DegenerateUniform) {
  SweepSpec s = linear(0, 0, 4);
  s.mode = SweepMode::Sampled;
  s.distribution = Distribution::Uniform;
  s.params.a = 0;
  s.params.b = 0;
  EXPECT_EQ(sample_offsets(s), (std::vector<double>{0, 0, 0, 0}));
}

TEST(SampleOffsets, NormalMeanWithinStatisticalBound) {
  SweepSpec s = linear(0, 0, 10000);
  s.mode = SweepMode::Sampled;
  s.distribution = Distribution::Normal;
  s.params.mean = 0;
  s.params.sd = 1;
  s.seed = 20160101;
  auto v = sample_offsets(s);
  double sum = 0;
  for (double x : v) sum += x;
  EXPECT_LT(std::abs(sum / v.size()), 4.0 * 1.0 / std::sqrt(10000.0));
}

TEST(SampleOffsets, PoissonDrawsAreNonNegativeIntegers) {
  SweepSpec s = linear(0, 0, 10000);
  s.mode = SweepMode::Sampled;
  s.distribution = Distribution::Poisson;
  s.params.lambda = 3;
  for (double x : sample_offsets(s)) {
    EXPECT_GE(x, 0.0);
    EXPECT_EQ(x, std::floor(x));
  }
}

TEST(SampleOffsets, ReproducibleForSameSeedAndDifferentAcrossSeeds) {
  SweepSpec s = linear(0, 0, 500);
  s.mode = SweepMode::Sampled;
  s.distribution = Distribution::Binomial;
  s.params.n = 20;
  s.params.p = 0.3;
  s.seed = 11;
  auto a = sample_offsets(s);
  EXPECT_EQ(a, sample_offsets(s));
  s.seed = 12;
  EXPECT_NE(a, sample_offsets(s));
}

TEST(SampleOffsets, DrawIndependentOfCount) {
  // Counter-based: the first draws of a longer request equal the shorter one.
  SweepSpec s = linear(0, 0, 10);
  s.mode = SweepMode::Sampled;
  s.distribution = Distribution::Normal;
  s.seed = 5;
  auto shortv = sample_offsets(s);
  s.count = 100;
  auto longv = sample_offsets(s);
  EXPECT_TRUE(std::equal(shortv.begin(), shortv.end(), longv.begin()));
}

TEST(SampleOffsets, InvalidParametersNameTheField) {
  SweepSpec s = linear(0, 0, 10);
  s.mode = SweepMode::Sampled;
  s.distribution = Distribution::Binomial;
  s.params.p = 1.5;
  try {
    sample_offsets(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidSpec);
    EXPECT_NE(std::string(e.what()).find("'p'"), std::string::npos);
  }
  s.distribution = Distribution::Poisson;
  s.params.lambda = 0;
  EXPECT_THROW(sample_offsets(s), Error);
  s.distribution = Distribution::Uniform;
  s.params.a = 2;
  s.params.b = 1;
  EXPECT_THROW(sample_offsets(s), Error);
}

TEST(ApplyOffset, AddZeroIsIdentity) {
  auto t = DriverTable::parse(kMet);
  EXPECT_EQ(apply_offset(t, "AirTemp", Operation::Add, 0.0), t);
}

TEST(ApplyOffset, AddMatchesIndependentRowPass) {
  auto t = DriverTable::parse("time,AirTemp\n0,5.0\n1,6.5\n");
  auto out = apply_offset(t, "AirTemp", Operation::Add, 2.5).to_csv();
  auto cells = column_cells(out, 1);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_DOUBLE_EQ(std::stod(cells[0]), 7.5);
  EXPECT_DOUBLE_EQ(std::stod(cells[1]), 9.0);
}

TEST(ApplyOffset, MultiplyThenDivideRestoresValues) {
  auto t = DriverTable::parse(kMet);
  auto back = apply_offset(apply_offset(t, "AirTemp", Operation::Multiply, 3.7), "AirTemp",
                           Operation::Divide, 3.7);
  auto a = t.column_values("AirTemp");
  auto b = back.column_values("AirTemp");
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], a[i], 1e-9 * std::abs(a[i]));
}

TEST(ApplyOffset, ErrorsForUnknownColumnAndZeroDivisor) {
  auto t = DriverTable::parse(kMet);
  EXPECT_THROW(apply_offset(t, "Rain", Operation::Add, 1), Error);
  EXPECT_THROW(apply_offset(t, "AirTemp", Operation::Divide, 0), Error);
}

TEST(DriverTable, RejectsMalformedInput) {
  EXPECT_THROW(DriverTable::parse("time,AirTemp\n0,1,2\n"), Error);
  EXPECT_THROW(DriverTable::parse("time,AirTemp\n0,abc\n"), Error);
  EXPECT_THROW(DriverTable::parse("time,AirTemp\n1,1\n0,2\n"), Error);
  EXPECT_THROW(DriverTable::parse(""), Error);
}

TEST(Expand, SingleZeroOffsetReproducesBaseline) {
  auto sims = expand(baseline(), linear(0, 0, 1));
  ASSERT_EQ(sims.size(), 1u);
  EXPECT_EQ(*sims[0].input_files.at("met_hourly.csv"), kMet);
}

TEST(Expand, TenThousandSimsNumberedFromZero) {
  auto sims = expand(baseline(), linear(-10, 30, 10000));
  ASSERT_EQ(sims.size(), 10000u);
  for (std::size_t i = 0; i < sims.size(); ++i) EXPECT_EQ(sims[i].sim_id, i);
  EXPECT_EQ(sims.back().provenance.offset, 30.0);
}

TEST(Expand, OnlyTargetColumnDiffers) {
  auto sims = expand(baseline(), linear(-1, 1, 3));
  ASSERT_EQ(sims.size(), 3u);
  EXPECT_EQ(*sims[1].input_files.at("met_hourly.csv"), kMet);
  std::string base = kMet;
  for (int i : {0, 2}) {
    const auto& driver = *sims[i].input_files.at("met_hourly.csv");
    EXPECT_NE(driver, base);
    for (std::size_t col : {0u, 2u, 3u}) EXPECT_EQ(column_cells(driver, col), column_cells(base, col));
    EXPECT_NE(column_cells(driver, 1), column_cells(base, 1));
    EXPECT_EQ(*sims[i].input_files.at("lake.nml"), "depth_layers=3\n");
  }
}

TEST(Expand, DeterministicAndCountMatchesForRandomSpecs) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 40; ++i) {
    SweepSpec s = linear(0, 0, rng() % 50 + 1);
    s.mode = SweepMode::Sampled;
    s.distribution = static_cast<Distribution>(rng() % 4);
    s.params.lambda = 2;
    s.params.a = -1;
    s.params.b = 1;
    s.params.n = 5;
    s.params.p = 0.4;
    s.operation = static_cast<Operation>(rng() % 3);
    s.seed = rng();
    auto a = expand(baseline(), s);
    auto b = expand(baseline(), s);
    ASSERT_EQ(a.size(), s.count);
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_EQ(*a[k].input_files.at("met_hourly.csv"), *b[k].input_files.at("met_hourly.csv"));
    }
  }
}

TEST(Expand, ErrorsNameTheFailingFile) {
  auto s = linear(0, 1, 2);
  s.variable = "NoSuchColumn";
  try {
    expand(baseline(), s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("met_hourly.csv"), std::string::npos);
  }
  InputSet bad = baseline();
  bad["met_hourly.csv"] = share("time,AirTemp\n0,x\n");
  try {
    expand(bad, linear(0, 1, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("met_hourly.csv"), std::string::npos);
  }
}

TEST(Validate, DividePolicyRefusesPossibleZero) {
  SweepSpec s = linear(-1, 1, 3);
  s.operation = Operation::Divide;
  EXPECT_THROW(validate(s), Error);
  s.mode = SweepMode::Sampled;
  s.distribution = Distribution::Poisson;
  s.params.lambda = 3;
  EXPECT_THROW(validate(s), Error);
  s.distribution = Distribution::Uniform;
  s.params.a = 1;
  s.params.b = 2;
  EXPECT_NO_THROW(validate(s));
}

TEST(SweepSpecWire, KeyValueRoundTrip) {
  SweepSpec s = linear(-10, 30, 10000);
  s.seed = 42;
  auto back = SweepSpec::from_kv(KeyValues::parse(s.to_kv().format()));
  EXPECT_EQ(back.to_kv(), s.to_kv());

  auto kv = KeyValues::parse(
      "driver_file=met_hourly.csv\nvariable=AirTemp\nmode=sampled\ndistribution=random\n"
      "count=5\noperation=subtract\nseed=1\n");
  auto sampled = SweepSpec::from_kv(kv);
  EXPECT_EQ(sampled.distribution, Distribution::Normal);
  EXPECT_EQ(sampled.operation, Operation::Subtract);
}
