#include "dlsq/problem.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace dlsq {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::vector<int> offsets_of(const std::vector<int>& sizes) {
  std::vector<int> off(sizes.size() + 1, 0);
  for (size_t i = 0; i < sizes.size(); ++i) off[i + 1] = off[i] + sizes[i];
  return off;
}

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

}  // namespace

BSplitRule b_split_rule_from_name(const std::string& name) {
  if (name == "equal") return BSplitRule::equal;
  if (name == "first_portion") return BSplitRule::first_portion;
  throw std::invalid_argument("unknown b_split_rule: " + name);
}

std::string b_split_rule_name(BSplitRule rule) {
  return rule == BSplitRule::equal ? "equal" : "first_portion";
}

std::vector<int> PartitionedLae::row_offsets() const { return offsets_of(row_sizes); }
std::vector<int> PartitionedLae::col_offsets() const { return offsets_of(col_sizes); }

Matrix PartitionedLae::block(int i, int j) const {
  const auto ro = row_offsets();
  const auto co = col_offsets();
  return problem.a.block(ro[static_cast<size_t>(i)], co[static_cast<size_t>(j)],
                         row_sizes[static_cast<size_t>(i)], col_sizes[static_cast<size_t>(j)]);
}

PartitionedLae partition_problem(const LaeProblem& problem, std::vector<int> row_sizes,
                                 std::vector<int> col_sizes, int bandwidth,
                                 BSplitRule rule) {
  require(problem.a.rows() >= 1 && problem.a.cols() >= 1, "partition: empty problem");
  require(problem.a.rows() == problem.b.size(), "partition: A rows and b length disagree");
  require(!problem.a.hasNaN() && problem.a.allFinite() && problem.b.allFinite(),
          "partition: non-finite data");
  require(!row_sizes.empty() && !col_sizes.empty(), "partition: empty size lists");
  for (int s : row_sizes) require(s >= 1, "partition: row block sizes must be positive");
  for (int s : col_sizes) require(s >= 1, "partition: column portion sizes must be positive");
  require(std::accumulate(row_sizes.begin(), row_sizes.end(), 0) == problem.a.rows(),
          "partition: row sizes must sum to m");
  require(std::accumulate(col_sizes.begin(), col_sizes.end(), 0) == problem.a.cols(),
          "partition: column sizes must sum to n");
  require(bandwidth >= 1, "partition: bandwidth must be at least 1");
  for (int s : col_sizes)
    require(s <= bandwidth, "partition: portion dimension " + std::to_string(s) +
                                " exceeds bandwidth " + std::to_string(bandwidth));

  PartitionedLae pl;
  pl.problem = problem;
  pl.row_sizes = std::move(row_sizes);
  pl.col_sizes = std::move(col_sizes);
  pl.bandwidth = bandwidth;
  pl.split_rule = rule;
  const auto ro = pl.row_offsets();
  const int q = pl.q();
  pl.b_split.resize(static_cast<size_t>(pl.p()));
  for (int i = 0; i < pl.p(); ++i) {
    const Vector bi = problem.b.segment(ro[static_cast<size_t>(i)], pl.row_sizes[static_cast<size_t>(i)]);
    auto& per = pl.b_split[static_cast<size_t>(i)];
    per.resize(static_cast<size_t>(q));
    for (int j = 0; j < q; ++j) {
      if (rule == BSplitRule::equal)
        per[static_cast<size_t>(j)] = bi / static_cast<double>(q);
      else
        per[static_cast<size_t>(j)] = (j == 0) ? bi : Vector::Zero(bi.size());
    }
  }
  return pl;
}

AugmentedSystem build_augmented(const PartitionedLae& pl, const UndirectedGraph& g,
                                const UndirectedGraph& g_c) {
  require(g.vertex_count == pl.p(), "build_augmented: G must have p vertices");
  require(g_c.vertex_count == pl.q(), "build_augmented: G_c must have q vertices");
  require(is_connected(g), "build_augmented: G must be connected");
  require(is_connected(g_c), "build_augmented: G_c must be connected");

  AugmentedSystem aug;
  aug.p = pl.p();
  aug.q = pl.q();
  aug.m = pl.m();
  aug.n = pl.n();
  aug.row_sizes = pl.row_sizes;
  aug.col_sizes = pl.col_sizes;
  const int p = aug.p, q = aug.q, m = aug.m, n = aug.n;
  const int pn = p * n, qm = q * m;
  const auto ro = pl.row_offsets();

  aug.portion_offsets.assign(static_cast<size_t>(q) + 1, 0);
  for (int j = 0; j < q; ++j)
    aug.portion_offsets[static_cast<size_t>(j) + 1] =
        aug.portion_offsets[static_cast<size_t>(j)] + p * pl.col_sizes[static_cast<size_t>(j)];

  aug.a_hat = Matrix::Zero(qm, pn);
  aug.b_hat = Vector::Zero(qm);
  for (int j = 0; j < q; ++j) {
    const int nj = pl.col_sizes[static_cast<size_t>(j)];
    int r0 = j * m;
    int c0 = aug.portion_offsets[static_cast<size_t>(j)];
    for (int i = 0; i < p; ++i) {
      aug.a_hat.block(r0, c0, pl.row_sizes[static_cast<size_t>(i)], nj) = pl.block(i, j);
      aug.b_hat.segment(j * m + ro[static_cast<size_t>(i)], pl.row_sizes[static_cast<size_t>(i)]) =
          pl.b_split[static_cast<size_t>(i)][static_cast<size_t>(j)];
      r0 += pl.row_sizes[static_cast<size_t>(i)];
      c0 += nj;
    }
  }

  const Matrix l = laplacian(g);
  const Matrix lc = laplacian(g_c);
  const Matrix sql = psd_sqrt(l);
  const Matrix sqlc = psd_sqrt(lc);

  aug.l_hat = Matrix::Zero(pn, pn);
  aug.sqrt_l_hat = Matrix::Zero(pn, pn);
  aug.l_hat_j.resize(static_cast<size_t>(q));
  aug.sqrt_l_hat_j.resize(static_cast<size_t>(q));
  for (int j = 0; j < q; ++j) {
    const int nj = pl.col_sizes[static_cast<size_t>(j)];
    const int s = aug.portion_offsets[static_cast<size_t>(j)];
    const Matrix blk = kron(l, Matrix::Identity(nj, nj));
    const Matrix sblk = kron(sql, Matrix::Identity(nj, nj));
    aug.l_hat.block(s, s, p * nj, p * nj) = blk;
    aug.sqrt_l_hat.block(s, s, p * nj, p * nj) = sblk;
    aug.l_hat_j[static_cast<size_t>(j)] = Matrix::Zero(pn, pn);
    aug.l_hat_j[static_cast<size_t>(j)].block(s, s, p * nj, p * nj) = blk;
    aug.sqrt_l_hat_j[static_cast<size_t>(j)] = Matrix::Zero(pn, pn);
    aug.sqrt_l_hat_j[static_cast<size_t>(j)].block(s, s, p * nj, p * nj) = sblk;
  }
  aug.l_c_aug = kron(lc, Matrix::Identity(m, m));
  aug.sqrt_l_c_aug = kron(sqlc, Matrix::Identity(m, m));
  return aug;
}

void Gains::validate() const {
  if (!(k_p > 0.0) || !(k_i > 0.0))
    throw std::invalid_argument("gains: k_p and k_i must be strictly positive");
}

namespace {

// Shared assembly for M-shaped block matrices; the scheduled variants swap
// the top-left Laplacian and the bottom-left square root.
Matrix assemble_m(const AugmentedSystem& aug, double kp_eff, double ki_top,
                  double ki_bottom, const Matrix& l_top, const Matrix& sqrt_bottom) {
  const int pn = aug.p * aug.n, qm = aug.q * aug.m;
  const int dim = 2 * pn + qm;
  Matrix mm = Matrix::Zero(dim, dim);
  mm.block(0, 0, pn, pn) = -(aug.a_hat.transpose() * aug.a_hat) - kp_eff * l_top;
  mm.block(0, pn, pn, qm) = aug.a_hat.transpose() * aug.sqrt_l_c_aug;
  mm.block(0, pn + qm, pn, pn) = -ki_top * aug.sqrt_l_hat;
  mm.block(pn, 0, qm, pn) = aug.sqrt_l_c_aug * aug.a_hat;
  mm.block(pn, pn, qm, qm) = -aug.l_c_aug;
  mm.block(pn + qm, 0, pn, pn) = ki_bottom * sqrt_bottom;
  return mm;
}

}  // namespace

AlgorithmMatrices build_matrices(const AugmentedSystem& aug, const Gains& gains) {
  gains.validate();
  AlgorithmMatrices out;
  out.p = aug.p;
  out.q = aug.q;
  out.m = aug.m;
  out.n = aug.n;
  out.portion_offsets = aug.portion_offsets;
  out.col_sizes = aug.col_sizes;
  out.alpha = gains.alpha;
  const double ki_rt = std::sqrt(gains.k_i);
  const double ki_rt_q = std::sqrt(gains.k_i / aug.q);
  const int dim = 2 * aug.p * aug.n + aug.q * aug.m;

  out.m_mat = assemble_m(aug, gains.k_p, ki_rt, ki_rt, aug.l_hat, aug.sqrt_l_hat);
  out.m_tilde = assemble_m(aug, gains.k_p / aug.q, ki_rt_q, ki_rt_q, aug.l_hat,
                           aug.sqrt_l_hat);
  out.m_s.reserve(static_cast<size_t>(aug.q));
  for (int k = 0; k < aug.q; ++k)
    out.m_s.push_back(assemble_m(aug, gains.k_p, ki_rt, ki_rt,
                                 aug.l_hat_j[static_cast<size_t>(k)],
                                 aug.sqrt_l_hat_j[static_cast<size_t>(k)]));
  out.m_ave = Matrix::Zero(dim, dim);
  for (const Matrix& ms : out.m_s) out.m_ave += ms;
  out.m_ave /= static_cast<double>(aug.q);

  out.f_mat = Matrix::Zero(dim, aug.q * aug.m);
  out.f_mat.topRows(aug.p * aug.n) = -aug.a_hat.transpose();
  out.f_mat.middleRows(aug.p * aug.n, aug.q * aug.m) = -aug.sqrt_l_c_aug;

  if (gains.alpha > 0.0) {
    // Phi(alpha) = (I + a M_s(q-1)) ... (I + a M_s(0)); phi_delta accumulates
    // (Phi - I)/alpha without the catastrophic subtraction near identity.
    Matrix partial = Matrix::Identity(dim, dim);
    Matrix delta = Matrix::Zero(dim, dim);
    for (int k = 0; k < aug.q; ++k) {
      const Matrix prod = out.m_s[static_cast<size_t>(k)] * partial;
      delta += prod;
      partial += gains.alpha * prod;
    }
    out.phi = partial;
    out.phi_delta = delta;
  }
  return out;
}

double alpha_max(const AlgorithmMatrices& mats, double cond_threshold, double* cond_v_out) {
  const DiagonalizabilityReport rep = diagonalizability_report(mats.m_ave, cond_threshold);
  if (cond_v_out) *cond_v_out = rep.cond_v;
  if (!rep.is_diagonalizable)
    throw numeric_error("alpha_max: m_ave is not numerically diagonalizable (cond(V) = " +
                        std::to_string(rep.cond_v) + ")");
  double m_bar = 0.0;
  for (const Matrix& ms : mats.m_s) m_bar = std::max(m_bar, spectral_norm(ms));
  const int q = mats.q;
  double tail = 0.0;
  for (int l = 2; l <= q; ++l) tail += std::pow(m_bar, l) * binomial(q, l);

  const auto lam = eigenvalues(mats.m_ave);
  double scale = 0.0;
  for (const Complex& l : lam) scale = std::max(scale, std::abs(l));
  double best = std::numeric_limits<double>::infinity();
  for (const Complex& l : lam) {
    if (std::abs(l) <= 1e-9 * scale) continue;
    const double denom = rep.cond_v * tail + q * q * std::norm(l);
    best = std::min(best, -2.0 * q * l.real() / denom);
  }
  if (!std::isfinite(best))
    throw numeric_error("alpha_max: empty nonzero spectrum");
  if (!(best > 0.0))
    throw numeric_error("alpha_max: bound is not positive; m_ave is not semi-Hurwitz");
  return best;
}

double alpha_max(const AugmentedSystem& aug, const Gains& gains) {
  return alpha_max(build_matrices(aug, gains));
}

Vector centralized_ls(const LaeProblem& problem) {
  return pseudo_inverse(problem.a) * problem.b;
}

double ls_residual(const LaeProblem& problem, const Vector& x) {
  if (x.size() != problem.a.cols())
    throw std::invalid_argument("ls_residual: dimension mismatch");
  return (problem.a * x - problem.b).norm();
}

Vector extract_consensus_x(const AlgorithmMatrices& mats, const Vector& stacked) {
  Vector x = Vector::Zero(mats.n);
  int col = 0;
  for (int j = 0; j < mats.q; ++j) {
    const int nj = mats.col_sizes[static_cast<size_t>(j)];
    const int s = mats.portion_offsets[static_cast<size_t>(j)];
    Vector avg = Vector::Zero(nj);
    for (int i = 0; i < mats.p; ++i) avg += stacked.segment(s + i * nj, nj);
    x.segment(col, nj) = avg / static_cast<double>(mats.p);
    col += nj;
  }
  return x;
}

KktSolution solve_kkt_min_norm(const AlgorithmMatrices& mats, const Vector& b_hat,
                               double tol_kkt) {
  if (b_hat.size() != mats.q * mats.m)
    throw std::invalid_argument("solve_kkt_min_norm: b_hat has wrong length");
  KktSolution sol;
  const Vector rhs = mats.f_mat * b_hat;
  sol.xi_star = pseudo_inverse(mats.m_mat) * rhs;
  const double resid = (mats.m_mat * sol.xi_star - rhs).norm();
  if (resid > tol_kkt * std::max(rhs.norm(), 1e-30) && rhs.norm() > 0.0)
    throw numeric_error("solve_kkt_min_norm: residual " + std::to_string(resid) +
                        " exceeds tolerance; assembly inconsistent");
  sol.x_star = extract_consensus_x(mats, sol.xi_star);
  sol.lambda_norm_part = sol.xi_star.tail(mats.p * mats.n);
  return sol;
}

KktSolution characterize_limit(const AlgorithmMatrices& mats, const Vector& b_hat,
                               LimitMode mode) {
  if (mode == LimitMode::discrete && !(mats.alpha > 0.0))
    throw std::invalid_argument("characterize_limit: discrete mode requires alpha set");
  KktSolution sol = solve_kkt_min_norm(mats, b_hat);
  const Matrix& split = (mode == LimitMode::continuous) ? mats.m_mat : mats.phi_delta;
  const SubspaceBasis ker = kernel_basis(split);
  const SubspaceBasis ran = range_basis(split);
  sol.zeta_star = oblique_project(sol.xi_star, ran, ker);
  sol.x_star = extract_consensus_x(mats, sol.zeta_star);
  return sol;
}

void save_bundle(const std::string& dir, const PartitionedLae& pl,
                 const UndirectedGraph& g, const UndirectedGraph& g_c) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_matrix((fs::path(dir) / "A.mat").string(), pl.problem.a);
  write_matrix((fs::path(dir) / "b.mat").string(), pl.problem.b);
  nlohmann::json j{{"row_sizes", pl.row_sizes},
                   {"col_sizes", pl.col_sizes},
                   {"bandwidth", pl.bandwidth},
                   {"b_split_rule", b_split_rule_name(pl.split_rule)},
                   {"graph", graph_to_json(g)},
                   {"portion_graph", graph_to_json(g_c)}};
  std::ofstream out(fs::path(dir) / "partition.json");
  out << j.dump(2) << "\n";
}

ProblemBundle load_bundle(const std::string& dir) {
  namespace fs = std::filesystem;
  LaeProblem problem;
  problem.a = read_matrix((fs::path(dir) / "A.mat").string());
  const Matrix bm = read_matrix((fs::path(dir) / "b.mat").string());
  if (bm.cols() != 1)
    throw std::invalid_argument("load_bundle: b.mat must be a column vector");
  problem.b = bm.col(0);
  std::ifstream in(fs::path(dir) / "partition.json");
  if (!in) throw std::invalid_argument("load_bundle: missing partition.json in " + dir);
  nlohmann::json j;
  in >> j;
  ProblemBundle out;
  out.pl = partition_problem(problem, j.at("row_sizes").get<std::vector<int>>(),
                             j.at("col_sizes").get<std::vector<int>>(),
                             j.at("bandwidth").get<int>(),
                             b_split_rule_from_name(j.at("b_split_rule").get<std::string>()));
  out.g = graph_from_json(j.at("graph"));
  out.g_c = graph_from_json(j.at("portion_graph"));
  return out;
}

}  // namespace dlsq
