#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlsq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;

// Thrown when a numerical guard trips (divergence, failed residual check,
// non-diagonalizable matrix where diagonalizability is required).
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Orthonormal basis of a subspace of R^n, stored column-wise.
struct SubspaceBasis {
  Eigen::Index ambient_dim = 0;
  Matrix vectors;  // ambient_dim x k, orthonormal columns

  Eigen::Index dim() const { return vectors.cols(); }
};

struct DiagonalizabilityReport {
  bool is_diagonalizable = false;
  double cond_v = std::numeric_limits<double>::infinity();
};

struct Eigendecomposition {
  Eigen::VectorXcd values;
  Eigen::MatrixXcd vectors;  // unit-norm columns
};

Matrix kron(const Matrix& a, const Matrix& b);

// Full eigenvalue multiset. Each returned pair is residual-checked against
// tol_eig_rel * ||a||; failures raise numeric_error.
std::vector<Complex> eigenvalues(const Matrix& a, double tol_eig_rel = 1e-9);
Eigendecomposition eigendecomposition(const Matrix& a, double tol_eig_rel = 1e-9);

// Symmetric PSD square root. Eigenvalues in [-tol_psd, 0) are clamped to zero;
// anything below -tol_psd is an error, as is asymmetry beyond tol_sym.
Matrix psd_sqrt(const Matrix& s, double tol_sym = 1e-10, double tol_psd = 1e-10);

// Moore-Penrose pseudo-inverse; singular values below tol * sigma_max are
// treated as zero.
Matrix pseudo_inverse(const Matrix& a, double tol = 1e-12);

Eigen::Index numeric_rank(const Matrix& a, double tol);

SubspaceBasis kernel_basis(const Matrix& a, double tol = 1e-10);
SubspaceBasis range_basis(const Matrix& a, double tol = 1e-10);

// Oblique projection of v onto span(onto) along span(along). The stacked
// basis [onto along] must form a well-conditioned square matrix.
Vector oblique_project(const Vector& v, const SubspaceBasis& onto,
                       const SubspaceBasis& along, double cond_threshold = 1e10);

bool is_semi_hurwitz(const Matrix& a, double tol = 1e-8);
bool is_semi_schur(const Matrix& a, double tol = 1e-8);

// Semi-Schur test for a matrix given as phi = I + delta without ever forming
// phi - I explicitly (delta carries the full relative accuracy when the
// product is close to identity). Checks |1 + mu| < 1 for every nonzero
// eigenvalue mu of delta and non-defectiveness of the zero eigenvalue.
bool is_semi_schur_shifted(const Matrix& delta, double tol = 1e-9);

DiagonalizabilityReport diagonalizability_report(const Matrix& a,
                                                 double cond_threshold = 1e8);

double spectral_norm(const Matrix& a);

// Largest principal angle between the spans of two orthonormal bases.
// Returns pi when dimensions differ.
double max_principal_angle(const SubspaceBasis& b1, const SubspaceBasis& b2);

// Plain-text matrix format: "rows cols" header line, then one line per row
// with 17-significant-digit entries (bit-faithful double round trip).
void write_matrix(const std::string& path, const Matrix& m);
Matrix read_matrix(const std::string& path);

}  // namespace dlsq
