#pragma once

#include "dlsq/graph.hpp"
#include "dlsq/linalg.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dlsq {

struct LaeProblem {
  Matrix a;  // m x n
  Vector b;  // m
};

enum class BSplitRule { equal, first_portion };

BSplitRule b_split_rule_from_name(const std::string& name);
std::string b_split_rule_name(BSplitRule rule);

// The global LAE split into p agent row blocks and q column portions, with
// the per-agent observation splits b_ij (sum over j recovers b_i).
struct PartitionedLae {
  LaeProblem problem;
  std::vector<int> row_sizes;  // m_1..m_p
  std::vector<int> col_sizes;  // n_1..n_q
  int bandwidth = 0;           // n̄; every n_j <= n̄
  BSplitRule split_rule = BSplitRule::equal;
  std::vector<std::vector<Vector>> b_split;  // [agent][portion], length m_i

  int p() const { return static_cast<int>(row_sizes.size()); }
  int q() const { return static_cast<int>(col_sizes.size()); }
  int m() const { return static_cast<int>(problem.a.rows()); }
  int n() const { return static_cast<int>(problem.a.cols()); }

  std::vector<int> row_offsets() const;  // length p+1
  std::vector<int> col_offsets() const;  // length q+1

  // A_ij, the (agent i, portion j) block, both 0-indexed.
  Matrix block(int i, int j) const;
};

PartitionedLae partition_problem(const LaeProblem& problem,
                                 std::vector<int> row_sizes,
                                 std::vector<int> col_sizes, int bandwidth,
                                 BSplitRule rule = BSplitRule::equal);

// Augmented operators: block-diagonal lift of the partitioned data plus the
// Laplacian machinery and its PSD square roots.
struct AugmentedSystem {
  int p = 0, q = 0, m = 0, n = 0;
  std::vector<int> row_sizes, col_sizes;
  Matrix a_hat;                   // qm x pn
  Vector b_hat;                   // qm
  Matrix l_hat;                   // pn x pn
  std::vector<Matrix> l_hat_j;    // q blocks, each pn x pn
  Matrix l_c_aug;                 // qm x qm
  Matrix sqrt_l_hat;
  std::vector<Matrix> sqrt_l_hat_j;
  Matrix sqrt_l_c_aug;
  std::vector<int> portion_offsets;  // offsets of portion blocks in the pn space, length q+1
};

AugmentedSystem build_augmented(const PartitionedLae& pl, const UndirectedGraph& g,
                                const UndirectedGraph& g_c);

struct Gains {
  double k_p = 25.0;
  double k_i = 5.0;
  double alpha = 0.0;  // 0 means "not set"; strictly positive when used

  void validate() const;
};

struct AlgorithmMatrices {
  int p = 0, q = 0, m = 0, n = 0;
  std::vector<int> portion_offsets;
  std::vector<int> col_sizes;
  double alpha = 0.0;
  Matrix m_mat;            // M
  Matrix m_tilde;          // M̃, gains scaled by 1/q
  Matrix m_ave;            // (1/q) sum of m_s
  std::vector<Matrix> m_s; // M_s(0..q-1)
  Matrix f_mat;            // F
  Matrix phi;              // Phi(alpha); identity-sized only when alpha > 0
  Matrix phi_delta;        // D with Phi(alpha) = I + alpha * D, cancellation-free
};

AlgorithmMatrices build_matrices(const AugmentedSystem& aug, const Gains& gains);

// Closed-form step-size bound from the kernel-preserving perturbation lemma,
// evaluated with m_ave in the averaged role. Requires m_ave diagonalizable.
double alpha_max(const AlgorithmMatrices& mats, double cond_threshold = 1e8,
                 double* cond_v_out = nullptr);
double alpha_max(const AugmentedSystem& aug, const Gains& gains);

Vector centralized_ls(const LaeProblem& problem);
double ls_residual(const LaeProblem& problem, const Vector& x);

struct KktSolution {
  Vector xi_star;           // minimal-norm solution of M xi = F b_hat
  Vector zeta_star;         // exact solution in ran(M) resp. ran(Phi - I)
  Vector x_star;            // length n, extracted via the consensus structure
  Vector lambda_norm_part;  // trailing pn block of xi_star
};

KktSolution solve_kkt_min_norm(const AlgorithmMatrices& mats, const Vector& b_hat,
                               double tol_kkt = 1e-8);

enum class LimitMode { continuous, discrete };

// The solution the flows/iterations converge to: the unique exact KKT
// solution in ran(M) (continuous) or in ran(Phi(alpha) - I) (discrete).
KktSolution characterize_limit(const AlgorithmMatrices& mats, const Vector& b_hat,
                               LimitMode mode);

// Extracts the consensus x (length n) from the leading pn block of a
// stacked vector, averaging the p agent copies per portion.
Vector extract_consensus_x(const AlgorithmMatrices& mats, const Vector& stacked);

// Problem bundle on disk: A.mat, b.mat plus partition.json.
void save_bundle(const std::string& dir, const PartitionedLae& pl,
                 const UndirectedGraph& g, const UndirectedGraph& g_c);
struct ProblemBundle {
  PartitionedLae pl;
  UndirectedGraph g;
  UndirectedGraph g_c;
};
ProblemBundle load_bundle(const std::string& dir);

}  // namespace dlsq
