#pragma once

#include "dlsq/protocols.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>

namespace dlsq {

// splitmix64: the pinned PRNG for cross-language reproducibility.
struct SplitMix64 {
  uint64_t state = 0;
  explicit SplitMix64(uint64_t seed) : state(seed) {}
  uint64_t next_u64() {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  // Uniform in [0, 1): top 53 bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }
};

// Standard normal draws via Box-Muller over a splitmix64 stream. Draws come
// in pairs (cos then sin); the order defines the bit-exact fill contract.
struct GaussianStream {
  SplitMix64 sm;
  bool has_spare = false;
  double spare = 0.0;
  explicit GaussianStream(uint64_t seed) : sm(seed) {}
  double next();
};

struct Conditioning {
  enum class Kind { gaussian, rank_deficient };
  Kind kind = Kind::gaussian;
  int rank = 0;  // only for rank_deficient
};

// Entries drawn row-major: A (or its two factors for rank_deficient), then b.
LaeProblem generate_random_problem(int m, int n, uint64_t seed,
                                   const Conditioning& cond = {});

enum class AlgorithmKind {
  sdls,
  full,
  consensus_projection_pi,
  ahu_flow,
  gradient_tracking,
  double_layer
};

AlgorithmKind algorithm_from_name(const std::string& name);
std::string algorithm_name(AlgorithmKind kind);

// Communication cycles charged per iteration under bandwidth n_bar.
long long comm_cycles_per_iteration(AlgorithmKind kind, int n, int n_bar, int q);

double metric_e1(const AgentState& states, const Vector& x_star);
double metric_e2(const AgentState& states);

// Time-varying observation generators.
struct ObservationSpec {
  enum class Kind { fixed, ramp, sinusoid, piecewise, filtered_noise };
  Kind kind = Kind::fixed;
  Vector ramp_delta;         // per-step increment
  double ramp_decay = 1.0;   // increments scale by decay^k (1 = pure ramp)
  Vector amplitude;          // sinusoid, elementwise
  double omega = 0.0, phase = 0.0;
  std::vector<std::pair<long long, Vector>> pieces;  // (start k, value), sorted
  double noise_beta = 1.0;   // filtered noise smoothing
  double noise_scale = 0.0;
  uint64_t noise_seed = 0;

  bool is_static() const;
};

// b(k) for the given base observation. For filtered_noise the values are the
// low-pass filtered cumulative Gaussian walk; deterministic in noise_seed.
Vector generate_tv_observation(const ObservationSpec& spec, const Vector& b0, long long k);

struct StopRule {
  double e2_tol = 1e-10;
  double state_change_tol = 1e-10;
  int consecutive = 10;
  double e1_below = 0.0;  // 0 disables the oracle-distance stop
};

struct RunConfig {
  // Problem source: a bundle directory or a generator spec.
  std::optional<std::string> problem_dir;
  struct Generator {
    int m = 0, n = 0;
    uint64_t seed = 0;
    Conditioning conditioning;
  };
  std::optional<Generator> generator;

  // Partition; when row_sizes/col_sizes are empty they are derived from p/q
  // by an even split (remainder spread over the leading blocks).
  int p = 1, q = 1;
  std::vector<int> row_sizes, col_sizes;
  int bandwidth = 0;  // 0: default to max portion size
  BSplitRule split_rule = BSplitRule::equal;
  nlohmann::json graph_spec;          // graph literal; default ring over p
  nlohmann::json portion_graph_spec;  // default ring over q

  AlgorithmKind algorithm = AlgorithmKind::sdls;
  Gains gains{25.0, 5.0, 0.0};
  bool alpha_auto = true;    // alpha = min(0.01, 0.5 * alpha_max)
  bool force_alpha = false;  // skip the alpha < min(1, alpha_max) gate
  double baseline_beta = 0.0;

  long long k_max = 10000;
  ObservationSpec signal;
  StopRule stop;
  long long metrics_stride = 1;
  bool parallel = false;
  int threads = 0;  // 0: hardware default

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct MetricsRow {
  long long k = 0;
  long long cycles = 0;
  double e1 = 0.0, e2 = 0.0, residual = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  nlohmann::json metadata;
};

std::string metrics_csv(const MetricsLog& log);
void write_metrics(const std::string& csv_path, const MetricsLog& log);

MetricsLog run_simulation(const RunConfig& cfg);

struct ComparisonRow {
  std::string algorithm;
  std::optional<long long> cycles_to_threshold;  // nullopt: "> budget"
  long long iterations = 0;
};

// Runs each config against the shared problem and reports the first
// cumulative cycle count at which e1 drops to the threshold.
std::vector<ComparisonRow> run_comparison(const std::vector<RunConfig>& cfgs,
                                          long long budget_cycles,
                                          double threshold = 1e-4);

std::string comparison_csv(const std::vector<ComparisonRow>& rows, long long budget);

}  // namespace dlsq
