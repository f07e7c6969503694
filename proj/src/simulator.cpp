#include "dlsq/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <thread>

namespace dlsq {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::vector<int> even_split(int total, int parts) {
  std::vector<int> sizes(static_cast<size_t>(parts), total / parts);
  for (int i = 0; i < total % parts; ++i) ++sizes[static_cast<size_t>(i)];
  return sizes;
}

}  // namespace

double GaussianStream::next() {
  if (has_spare) {
    has_spare = false;
    return spare;
  }
  const double u1 = sm.next_double();
  const double u2 = sm.next_double();
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  const double th = 2.0 * M_PI * u2;
  spare = r * std::sin(th);
  has_spare = true;
  return r * std::cos(th);
}

LaeProblem generate_random_problem(int m, int n, uint64_t seed, const Conditioning& cond) {
  require(m >= 1 && n >= 1, "generate_random_problem: dimensions must be positive");
  GaussianStream gs(seed);
  LaeProblem out;
  if (cond.kind == Conditioning::Kind::gaussian) {
    out.a.resize(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.a(i, j) = gs.next();
  } else {
    require(cond.rank >= 1 && cond.rank <= std::min(m, n),
            "generate_random_problem: rank must lie in [1, min(m, n)]");
    Matrix g1(m, cond.rank), g2(cond.rank, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < cond.rank; ++j) g1(i, j) = gs.next();
    for (int i = 0; i < cond.rank; ++i)
      for (int j = 0; j < n; ++j) g2(i, j) = gs.next();
    out.a = g1 * g2;
  }
  out.b.resize(m);
  for (int i = 0; i < m; ++i) out.b(i) = gs.next();
  return out;
}

AlgorithmKind algorithm_from_name(const std::string& name) {
  if (name == "sdls") return AlgorithmKind::sdls;
  if (name == "full") return AlgorithmKind::full;
  if (name == "consensus_projection_pi") return AlgorithmKind::consensus_projection_pi;
  if (name == "ahu_flow") return AlgorithmKind::ahu_flow;
  if (name == "gradient_tracking") return AlgorithmKind::gradient_tracking;
  if (name == "double_layer") return AlgorithmKind::double_layer;
  throw std::invalid_argument("unknown algorithm: " + name);
}

std::string algorithm_name(AlgorithmKind kind) {
  switch (kind) {
    case AlgorithmKind::sdls: return "sdls";
    case AlgorithmKind::full: return "full";
    case AlgorithmKind::consensus_projection_pi: return "consensus_projection_pi";
    case AlgorithmKind::ahu_flow: return "ahu_flow";
    case AlgorithmKind::gradient_tracking: return "gradient_tracking";
    case AlgorithmKind::double_layer: return "double_layer";
  }
  return "?";
}

long long comm_cycles_per_iteration(AlgorithmKind kind, int n, int n_bar, int q) {
  require(n_bar >= 1, "comm_cycles_per_iteration: bandwidth must be at least 1");
  (void)q;
  auto ceil_div = [](long long a, long long b) { return (a + b - 1) / b; };
  switch (kind) {
    case AlgorithmKind::sdls:
      return 1;  // one scheduled portion per iteration, n_j <= n_bar
    case AlgorithmKind::double_layer:
      return 2;
    case AlgorithmKind::full:
      return ceil_div(n, n_bar);  // the whole guess x
    case AlgorithmKind::consensus_projection_pi:
    case AlgorithmKind::ahu_flow:
    case AlgorithmKind::gradient_tracking:
      return ceil_div(2LL * n, n_bar);  // x and z payloads
  }
  return 1;
}

double metric_e1(const AgentState& states, const Vector& x_star) {
  require(!states.x.empty(), "metric_e1: empty state");
  double sum = 0.0;
  for (const Vector& xi : states.x) {
    require(xi.size() == x_star.size(), "metric_e1: dimension mismatch");
    sum += (xi - x_star).norm();
  }
  return sum / static_cast<double>(states.x.size());
}

double metric_e2(const AgentState& states) {
  require(!states.x.empty(), "metric_e2: empty state");
  Vector avg = Vector::Zero(states.x.front().size());
  for (const Vector& xi : states.x) avg += xi;
  avg /= static_cast<double>(states.x.size());
  double sum = 0.0;
  for (const Vector& xi : states.x) sum += (xi - avg).norm();
  return sum / static_cast<double>(states.x.size());
}

bool ObservationSpec::is_static() const {
  switch (kind) {
    case Kind::fixed: return true;
    case Kind::ramp: return ramp_delta.size() == 0 || ramp_delta.norm() == 0.0;
    case Kind::sinusoid: return amplitude.size() == 0 || amplitude.norm() == 0.0;
    case Kind::piecewise: return pieces.empty();
    case Kind::filtered_noise: return noise_scale == 0.0;
  }
  return true;
}

namespace {

// Incremental evaluator shared by the engine and the stateless query.
struct ObservationState {
  const ObservationSpec& spec;
  Vector b0;
  long long k = 0;
  Vector current;
  Vector filter_state;
  std::optional<GaussianStream> gs;

  ObservationState(const ObservationSpec& s, const Vector& base) : spec(s), b0(base) {
    current = b0;
    if (spec.kind == ObservationSpec::Kind::filtered_noise) {
      gs.emplace(spec.noise_seed);
      filter_state = draw();
      current = b0 + filter_state;
    } else if (spec.kind == ObservationSpec::Kind::sinusoid) {
      current = value_at(0);
    } else if (spec.kind == ObservationSpec::Kind::piecewise) {
      current = value_at(0);
    }
  }

  Vector draw() {
    Vector v(b0.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = spec.noise_scale * gs->next();
    return v;
  }

  Vector value_at(long long kk) const {
    switch (spec.kind) {
      case ObservationSpec::Kind::fixed:
        return b0;
      case ObservationSpec::Kind::ramp: {
        if (spec.ramp_delta.size() == 0) return b0;
        double scale;
        if (spec.ramp_decay == 1.0)
          scale = static_cast<double>(kk);
        else
          scale = (1.0 - std::pow(spec.ramp_decay, static_cast<double>(kk))) /
                  (1.0 - spec.ramp_decay);
        return b0 + scale * spec.ramp_delta;
      }
      case ObservationSpec::Kind::sinusoid: {
        if (spec.amplitude.size() == 0) return b0;
        const double s = std::sin(spec.omega * static_cast<double>(kk) + spec.phase);
        return b0 + s * spec.amplitude;
      }
      case ObservationSpec::Kind::piecewise: {
        Vector v = b0;
        for (const auto& [start, val] : spec.pieces)
          if (start <= kk) v = val;
        return v;
      }
      case ObservationSpec::Kind::filtered_noise:
        throw std::logic_error("filtered_noise must be evaluated incrementally");
    }
    return b0;
  }

  void advance() {
    ++k;
    if (spec.kind == ObservationSpec::Kind::filtered_noise) {
      filter_state = (1.0 - spec.noise_beta) * filter_state + spec.noise_beta * draw();
      current = b0 + filter_state;
    } else {
      current = value_at(k);
    }
  }
};

}  // namespace

Vector generate_tv_observation(const ObservationSpec& spec, const Vector& b0, long long k) {
  require(k >= 0, "generate_tv_observation: k must be non-negative");
  if (spec.kind == ObservationSpec::Kind::ramp && spec.ramp_delta.size() > 0)
    require(spec.ramp_delta.size() == b0.size(), "observation: ramp delta dimension mismatch");
  if (spec.kind == ObservationSpec::Kind::sinusoid && spec.amplitude.size() > 0)
    require(spec.amplitude.size() == b0.size(), "observation: amplitude dimension mismatch");
  if (spec.kind == ObservationSpec::Kind::filtered_noise)
    require(spec.noise_beta > 0.0 && spec.noise_beta <= 1.0,
            "observation: noise_beta must lie in (0, 1]");
  ObservationState st(spec, b0);
  for (long long i = 0; i < k; ++i) st.advance();
  return st.current;
}

// ---------------- RunConfig JSON ----------------

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (j.contains("problem")) {
    const auto& p = j.at("problem");
    if (p.is_string()) {
      cfg.problem_dir = p.get<std::string>();
    } else {
      Generator g;
      g.m = p.at("m").get<int>();
      g.n = p.at("n").get<int>();
      g.seed = p.value("seed", 0ULL);
      if (p.contains("rank")) {
        g.conditioning.kind = Conditioning::Kind::rank_deficient;
        g.conditioning.rank = p.at("rank").get<int>();
      }
      cfg.generator = g;
    }
  }
  cfg.p = j.value("p", 1);
  cfg.q = j.value("q", 1);
  if (j.contains("row_sizes")) cfg.row_sizes = j.at("row_sizes").get<std::vector<int>>();
  if (j.contains("col_sizes")) cfg.col_sizes = j.at("col_sizes").get<std::vector<int>>();
  cfg.bandwidth = j.value("bandwidth", 0);
  cfg.split_rule = b_split_rule_from_name(j.value("b_split_rule", std::string("equal")));
  if (j.contains("graph")) cfg.graph_spec = j.at("graph");
  if (j.contains("portion_graph")) cfg.portion_graph_spec = j.at("portion_graph");
  cfg.algorithm = algorithm_from_name(j.value("algorithm", std::string("sdls")));
  cfg.gains.k_p = j.value("k_p", 25.0);
  cfg.gains.k_i = j.value("k_i", 5.0);
  if (j.contains("alpha")) {
    const auto& a = j.at("alpha");
    if (a.is_string()) {
      require(a.get<std::string>() == "auto", "config: alpha must be a number or \"auto\"");
      cfg.alpha_auto = true;
    } else {
      cfg.alpha_auto = false;
      cfg.gains.alpha = a.get<double>();
      require(cfg.gains.alpha > 0.0, "config: alpha must be strictly positive");
    }
  }
  cfg.force_alpha = j.value("force_alpha", false);
  cfg.baseline_beta = j.value("baseline_beta", 0.0);
  cfg.k_max = j.value("k_max", 10000LL);
  require(cfg.k_max >= 1, "config: k_max must be at least 1");
  if (j.contains("signal")) {
    const auto& s = j.at("signal");
    const std::string kind = s.value("kind", std::string("fixed"));
    if (kind == "fixed") {
      cfg.signal.kind = ObservationSpec::Kind::fixed;
    } else if (kind == "ramp") {
      cfg.signal.kind = ObservationSpec::Kind::ramp;
      const auto d = s.at("delta").get<std::vector<double>>();
      cfg.signal.ramp_delta = Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size()));
      cfg.signal.ramp_decay = s.value("decay", 1.0);
    } else if (kind == "sinusoid") {
      cfg.signal.kind = ObservationSpec::Kind::sinusoid;
      const auto a = s.at("amplitude").get<std::vector<double>>();
      cfg.signal.amplitude = Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
      cfg.signal.omega = s.at("omega").get<double>();
      cfg.signal.phase = s.value("phase", 0.0);
    } else if (kind == "piecewise") {
      cfg.signal.kind = ObservationSpec::Kind::piecewise;
      for (const auto& piece : s.at("pieces")) {
        const auto v = piece.at("value").get<std::vector<double>>();
        cfg.signal.pieces.emplace_back(
            piece.at("k").get<long long>(),
            Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
      }
      std::sort(cfg.signal.pieces.begin(), cfg.signal.pieces.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
    } else if (kind == "filtered_noise") {
      cfg.signal.kind = ObservationSpec::Kind::filtered_noise;
      cfg.signal.noise_beta = s.value("beta", 0.5);
      cfg.signal.noise_scale = s.at("scale").get<double>();
      cfg.signal.noise_seed = s.value("seed", 0ULL);
    } else {
      throw std::invalid_argument("config: unknown signal kind " + kind);
    }
  }
  if (j.contains("stop")) {
    const auto& s = j.at("stop");
    cfg.stop.e2_tol = s.value("e2_tol", 1e-10);
    cfg.stop.state_change_tol = s.value("state_change_tol", 1e-10);
    cfg.stop.consecutive = s.value("consecutive", 10);
    cfg.stop.e1_below = s.value("e1_below", 0.0);
  }
  cfg.metrics_stride = j.value("metrics_stride", 1LL);
  require(cfg.metrics_stride >= 1, "config: metrics_stride must be at least 1");
  cfg.parallel = j.value("parallel", false);
  cfg.threads = j.value("threads", 0);
  return cfg;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  if (problem_dir) {
    j["problem"] = *problem_dir;
  } else if (generator) {
    nlohmann::json g{{"m", generator->m}, {"n", generator->n}, {"seed", generator->seed}};
    if (generator->conditioning.kind == Conditioning::Kind::rank_deficient)
      g["rank"] = generator->conditioning.rank;
    j["problem"] = g;
  }
  j["p"] = p;
  j["q"] = q;
  if (!row_sizes.empty()) j["row_sizes"] = row_sizes;
  if (!col_sizes.empty()) j["col_sizes"] = col_sizes;
  if (bandwidth > 0) j["bandwidth"] = bandwidth;
  j["b_split_rule"] = b_split_rule_name(split_rule);
  if (!graph_spec.is_null()) j["graph"] = graph_spec;
  if (!portion_graph_spec.is_null()) j["portion_graph"] = portion_graph_spec;
  j["algorithm"] = algorithm_name(algorithm);
  j["k_p"] = gains.k_p;
  j["k_i"] = gains.k_i;
  if (alpha_auto)
    j["alpha"] = "auto";
  else
    j["alpha"] = gains.alpha;
  j["force_alpha"] = force_alpha;
  if (baseline_beta > 0.0) j["baseline_beta"] = baseline_beta;
  j["k_max"] = k_max;
  switch (signal.kind) {
    case ObservationSpec::Kind::fixed:
      break;
    case ObservationSpec::Kind::ramp: {
      std::vector<double> d(signal.ramp_delta.data(),
                            signal.ramp_delta.data() + signal.ramp_delta.size());
      j["signal"] = {{"kind", "ramp"}, {"delta", d}, {"decay", signal.ramp_decay}};
      break;
    }
    case ObservationSpec::Kind::sinusoid: {
      std::vector<double> a(signal.amplitude.data(),
                            signal.amplitude.data() + signal.amplitude.size());
      j["signal"] = {{"kind", "sinusoid"}, {"amplitude", a}, {"omega", signal.omega},
                     {"phase", signal.phase}};
      break;
    }
    case ObservationSpec::Kind::piecewise: {
      nlohmann::json pieces = nlohmann::json::array();
      for (const auto& [start, val] : signal.pieces) {
        std::vector<double> v(val.data(), val.data() + val.size());
        pieces.push_back({{"k", start}, {"value", v}});
      }
      j["signal"] = {{"kind", "piecewise"}, {"pieces", pieces}};
      break;
    }
    case ObservationSpec::Kind::filtered_noise:
      j["signal"] = {{"kind", "filtered_noise"}, {"beta", signal.noise_beta},
                     {"scale", signal.noise_scale}, {"seed", signal.noise_seed}};
      break;
  }
  j["stop"] = {{"e2_tol", stop.e2_tol},
               {"state_change_tol", stop.state_change_tol},
               {"consecutive", stop.consecutive},
               {"e1_below", stop.e1_below}};
  j["metrics_stride"] = metrics_stride;
  j["parallel"] = parallel;
  if (threads > 0) j["threads"] = threads;
  return j;
}

// ---------------- engine ----------------

namespace {

struct ResolvedProblem {
  PartitionedLae pl;
  UndirectedGraph g, g_c;
};

ResolvedProblem resolve_problem(const RunConfig& cfg) {
  if (cfg.problem_dir) {
    ProblemBundle bundle = load_bundle(*cfg.problem_dir);
    return {std::move(bundle.pl), std::move(bundle.g), std::move(bundle.g_c)};
  }
  require(cfg.generator.has_value(), "config: either a problem dir or a generator is required");
  const auto& gen = *cfg.generator;
  LaeProblem problem = generate_random_problem(gen.m, gen.n, gen.seed, gen.conditioning);
  std::vector<int> rows = cfg.row_sizes.empty() ? even_split(gen.m, cfg.p) : cfg.row_sizes;
  std::vector<int> cols = cfg.col_sizes.empty() ? even_split(gen.n, cfg.q) : cfg.col_sizes;
  int bw = cfg.bandwidth;
  if (bw == 0)
    for (int c : cols) bw = std::max(bw, c);
  PartitionedLae pl = partition_problem(problem, rows, cols, bw, cfg.split_rule);
  UndirectedGraph g = cfg.graph_spec.is_null()
                          ? make_topology(Topology::ring, pl.p())
                          : graph_from_json(cfg.graph_spec);
  UndirectedGraph g_c = cfg.portion_graph_spec.is_null()
                            ? make_topology(Topology::ring, pl.q())
                            : graph_from_json(cfg.portion_graph_spec);
  return {std::move(pl), std::move(g), std::move(g_c)};
}

double state_sup_change(const AgentState& a, const AgentState& b) {
  double out = 0.0;
  for (size_t i = 0; i < a.x.size(); ++i) {
    if (a.x[i].size() > 0) out = std::max(out, (a.x[i] - b.x[i]).cwiseAbs().maxCoeff());
    if (a.y[i].size() > 0) out = std::max(out, (a.y[i] - b.y[i]).cwiseAbs().maxCoeff());
    if (a.z[i].size() > 0) out = std::max(out, (a.z[i] - b.z[i]).cwiseAbs().maxCoeff());
  }
  return out;
}

bool is_baseline(AlgorithmKind kind) {
  return kind != AlgorithmKind::sdls && kind != AlgorithmKind::full;
}

BaselineKind as_baseline(AlgorithmKind kind) {
  switch (kind) {
    case AlgorithmKind::consensus_projection_pi: return BaselineKind::consensus_projection_pi;
    case AlgorithmKind::ahu_flow: return BaselineKind::ahu_flow;
    case AlgorithmKind::gradient_tracking: return BaselineKind::gradient_tracking;
    case AlgorithmKind::double_layer: return BaselineKind::double_layer;
    default: throw std::logic_error("not a baseline");
  }
}

}  // namespace

MetricsLog run_simulation(const RunConfig& cfg) {
  ResolvedProblem rp = resolve_problem(cfg);
  const ProtocolContext cx = ProtocolContext::make(rp.pl, rp.g, rp.g_c);
  const bool tracking = !cfg.signal.is_static();
  if (tracking)
    require(cfg.algorithm == AlgorithmKind::sdls,
            "config: time-varying observations require the sdls algorithm");

  Gains gains = cfg.gains;
  nlohmann::json meta;
  meta["config"] = cfg.to_json();
  meta["b_split_rule"] = b_split_rule_name(cx.split_rule);
  meta["baseline_discretization"] = "explicit_euler";

  const bool needs_bound =
      (cfg.algorithm == AlgorithmKind::sdls && (cfg.alpha_auto || !cfg.force_alpha)) ||
      (cfg.algorithm == AlgorithmKind::full && cfg.alpha_auto);
  if (cfg.alpha_auto && is_baseline(cfg.algorithm))
    throw std::invalid_argument("config: baselines need an explicit alpha");
  if (needs_bound) {
    const AugmentedSystem aug = build_augmented(rp.pl, rp.g, rp.g_c);
    Gains probe = gains;
    probe.alpha = 0.0;
    AlgorithmMatrices mats = build_matrices(aug, probe);
    double cond_v = 0.0;
    double bound;
    if (cfg.algorithm == AlgorithmKind::full) {
      // Unscheduled law: per-step map I + alpha M, the q = 1 form of the bound.
      const DiagonalizabilityReport rep = diagonalizability_report(mats.m_mat);
      cond_v = rep.cond_v;
      if (!rep.is_diagonalizable)
        throw numeric_error("alpha bound: M is not numerically diagonalizable");
      const auto lam = eigenvalues(mats.m_mat);
      double scale = 0.0;
      for (const Complex& l : lam) scale = std::max(scale, std::abs(l));
      bound = std::numeric_limits<double>::infinity();
      for (const Complex& l : lam)
        if (std::abs(l) > 1e-9 * scale)
          bound = std::min(bound, -2.0 * l.real() / std::norm(l));
    } else {
      bound = alpha_max(mats, 1e8, &cond_v);
    }
    meta["alpha_max"] = bound;
    meta["cond_v"] = cond_v;
    meta["diagonalizable"] = true;
    if (cfg.alpha_auto) {
      gains.alpha = std::min(0.01, 0.5 * std::min(1.0, bound));
    } else if (!cfg.force_alpha && cfg.algorithm == AlgorithmKind::sdls &&
               !(gains.alpha < std::min(1.0, bound))) {
      throw std::invalid_argument(
          "config: alpha " + std::to_string(gains.alpha) + " is not below min(1, alpha_max) = " +
          std::to_string(std::min(1.0, bound)) + "; pass force_alpha to override");
    }
  }
  gains.validate();
  require(gains.alpha > 0.0, "config: alpha must be resolved to a positive value");
  meta["alpha_resolved"] = gains.alpha;

  const long long cpi = comm_cycles_per_iteration(cfg.algorithm, cx.n, cx.bandwidth, cx.q);
  meta["comm_cycles_per_iteration"] = cpi;

  // Oracle reference for e1.
  const Matrix a_pinv = pseudo_inverse(rp.pl.problem.a);
  Vector x_star = a_pinv * rp.pl.problem.b;

  AgentState state = is_baseline(cfg.algorithm)
                         ? init_baseline(cx, as_baseline(cfg.algorithm))
                         : init_agents(cx);
  AgentState next = state;

  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int n_threads =
      cfg.parallel ? std::max(1, cfg.threads > 0 ? cfg.threads : std::min(hw, cx.p)) : 1;
  std::vector<StepScratch> scratch(static_cast<size_t>(n_threads));
  for (auto& s : scratch) s.resize_for(cx);

  std::optional<ObservationState> obs;
  std::vector<std::vector<Vector>> delta_b;
  if (tracking) {
    obs.emplace(cfg.signal, rp.pl.problem.b);
    delta_b.resize(static_cast<size_t>(cx.p));
    for (int i = 0; i < cx.p; ++i)
      delta_b[static_cast<size_t>(i)].assign(
          static_cast<size_t>(cx.q), Vector::Zero(cx.row_sizes[static_cast<size_t>(i)]));
    x_star = a_pinv * obs->current;
  }

  MetricsLog log;
  log.metadata = std::move(meta);
  Vector b_now = tracking ? obs->current : rp.pl.problem.b;
  auto residual_of = [&](const AgentState& st) {
    double sum = 0.0;
    for (const Vector& xi : st.x) sum += (rp.pl.problem.a * xi - b_now).norm();
    return sum / static_cast<double>(cx.p);
  };
  auto record = [&](long long k, double e1, double e2) {
    log.rows.push_back({k, k * cpi, e1, e2, residual_of(state)});
  };

  double e1 = metric_e1(state, x_star);
  double e2 = metric_e2(state);
  record(0, e1, e2);

  long long stop_k = 0;
  std::string stop_reason = "k_max";
  std::optional<long long> first_e1_cross;
  int calm_streak = 0;

  for (long long k = 0; k < cfg.k_max; ++k) {
    if (tracking) {
      const Vector b_prev = obs->current;
      obs->advance();
      const Vector db = obs->current - b_prev;
      for (int i = 0; i < cx.p; ++i) {
        const auto dbi = db.segment(cx.row_offsets[static_cast<size_t>(i)],
                                    cx.row_sizes[static_cast<size_t>(i)]);
        auto& per = delta_b[static_cast<size_t>(i)];
        for (int j = 0; j < cx.q; ++j) {
          if (cx.split_rule == BSplitRule::equal)
            per[static_cast<size_t>(j)] = dbi / static_cast<double>(cx.q);
          else
            per[static_cast<size_t>(j)] = (j == 0) ? Vector(dbi) : Vector(Vector::Zero(dbi.size()));
        }
      }
      b_now = obs->current;
      x_star = a_pinv * b_now;
    }

    auto run_range = [&](int begin, int end, StepScratch& s) {
      if (is_baseline(cfg.algorithm)) {
        step_baseline_inplace(cx, as_baseline(cfg.algorithm), state, gains,
                              cfg.baseline_beta, begin, end, next, s);
      } else {
        step_portioned_inplace(cx, state, k, cfg.algorithm == AlgorithmKind::full, gains,
                               tracking ? &delta_b : nullptr, begin, end, next, s);
      }
    };
    if (n_threads == 1) {
      run_range(0, cx.p, scratch[0]);
    } else {
      std::vector<std::future<void>> futs;
      const int chunk = (cx.p + n_threads - 1) / n_threads;
      for (int t = 0; t < n_threads; ++t) {
        const int begin = t * chunk;
        const int end = std::min(cx.p, begin + chunk);
        if (begin >= end) break;
        futs.push_back(std::async(std::launch::async, run_range, begin, end,
                                  std::ref(scratch[static_cast<size_t>(t)])));
      }
      for (auto& f : futs) f.get();
    }

    const double change = state_sup_change(next, state);
    std::swap(state, next);
    e1 = metric_e1(state, x_star);
    e2 = metric_e2(state);
    stop_k = k + 1;

    if (!std::isfinite(e1) || e1 > 1e12)
      throw numeric_error("run_simulation: divergence guard tripped at k = " +
                          std::to_string(k + 1) + " (e1 = " + std::to_string(e1) + ")");

    if (stop_k % cfg.metrics_stride == 0) record(stop_k, e1, e2);

    if (!first_e1_cross && cfg.stop.e1_below > 0.0 && e1 <= cfg.stop.e1_below)
      first_e1_cross = stop_k;
    if (first_e1_cross) {
      stop_reason = "e1_below";
      break;
    }
    if (cfg.stop.state_change_tol > 0.0 && cfg.stop.e2_tol > 0.0 &&
        change < cfg.stop.state_change_tol && e2 < cfg.stop.e2_tol) {
      if (++calm_streak >= cfg.stop.consecutive) {
        stop_reason = "stationary";
        break;
      }
    } else {
      calm_streak = 0;
    }
  }

  if (log.rows.back().k != stop_k) record(stop_k, e1, e2);
  log.metadata["stopped_at_k"] = stop_k;
  log.metadata["stop_reason"] = stop_reason;
  log.metadata["final_e1"] = e1;
  log.metadata["final_e2"] = e2;
  if (first_e1_cross) log.metadata["first_k_e1_below"] = *first_e1_cross;
  return log;
}

std::string metrics_csv(const MetricsLog& log) {
  std::string out = "k,cycles,e1,e2,residual\n";
  char buf[160];
  for (const MetricsRow& r : log.rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.17g,%.17g,%.17g\n", r.k, r.cycles, r.e1,
                  r.e2, r.residual);
    out += buf;
  }
  return out;
}

void write_metrics(const std::string& csv_path, const MetricsLog& log) {
  {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw std::runtime_error("write_metrics: cannot open " + csv_path);
    out << metrics_csv(log);
  }
  std::ofstream side(csv_path + ".json");
  if (!side) throw std::runtime_error("write_metrics: cannot open sidecar for " + csv_path);
  side << log.metadata.dump(2) << "\n";
}

std::vector<ComparisonRow> run_comparison(const std::vector<RunConfig>& cfgs,
                                          long long budget_cycles, double threshold) {
  require(!cfgs.empty(), "run_comparison: need at least one config");
  require(budget_cycles >= 1, "run_comparison: budget must be positive");
  const nlohmann::json first_problem = cfgs.front().to_json().value("problem", nlohmann::json());
  for (const RunConfig& cfg : cfgs)
    require(cfg.to_json().value("problem", nlohmann::json()) == first_problem,
            "run_comparison: all configs must share one problem instance");
  std::vector<ComparisonRow> rows;
  for (RunConfig cfg : cfgs) {
    cfg.stop.e1_below = threshold;
    MetricsLog log = run_simulation(cfg);
    ComparisonRow row;
    row.algorithm = algorithm_name(cfg.algorithm);
    row.iterations = log.metadata.at("stopped_at_k").get<long long>();
    const long long per_iter = log.metadata.at("comm_cycles_per_iteration").get<long long>();
    if (log.metadata.value("stop_reason", std::string()) == "e1_below") {
      const long long cycles = row.iterations * per_iter;
      if (cycles <= budget_cycles) row.cycles_to_threshold = cycles;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows, long long budget) {
  std::string out = "algorithm,cycles_to_threshold,iterations\n";
  char buf[160];
  for (const ComparisonRow& r : rows) {
    if (r.cycles_to_threshold)
      std::snprintf(buf, sizeof(buf), "%s,%lld,%lld\n", r.algorithm.c_str(),
                    *r.cycles_to_threshold, r.iterations);
    else
      std::snprintf(buf, sizeof(buf), "%s,> %lld,%lld\n", r.algorithm.c_str(), budget,
                    r.iterations);
    out += buf;
  }
  return out;
}

}  // namespace dlsq
