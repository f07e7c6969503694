#include "dlsq/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dlsq {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_finite(const Matrix& a, const char* name) {
  if (!a.allFinite())
    throw std::invalid_argument(std::string(name) + ": non-finite entries");
}

Eigen::JacobiSVD<Matrix> svd_of(const Matrix& a, unsigned options) {
  return Eigen::JacobiSVD<Matrix>(a, options);
}

}  // namespace

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Eigendecomposition eigendecomposition(const Matrix& a, double tol_eig_rel) {
  require(a.rows() == a.cols(), "eigendecomposition: matrix must be square");
  require_finite(a, "eigendecomposition");
  Eigen::EigenSolver<Matrix> es(a, /*computeEigenvectors=*/true);
  if (es.info() != Eigen::Success)
    throw numeric_error("eigendecomposition: solver did not converge");
  Eigendecomposition out;
  out.values = es.eigenvalues();
  out.vectors = es.eigenvectors();  // already unit columns
  const double scale = a.norm();
  const double tol = tol_eig_rel * scale;
  for (Eigen::Index i = 0; i < out.values.size(); ++i) {
    const Eigen::VectorXcd v = out.vectors.col(i);
    const double resid = (a * v - out.values(i) * v).norm();
    if (resid > tol && resid > 1e-300)
      throw numeric_error("eigendecomposition: residual " + std::to_string(resid) +
                          " exceeds tolerance " + std::to_string(tol));
  }
  return out;
}

std::vector<Complex> eigenvalues(const Matrix& a, double tol_eig_rel) {
  const Eigendecomposition ed = eigendecomposition(a, tol_eig_rel);
  std::vector<Complex> out(static_cast<size_t>(ed.values.size()));
  for (Eigen::Index i = 0; i < ed.values.size(); ++i) out[static_cast<size_t>(i)] = ed.values(i);
  return out;
}

Matrix psd_sqrt(const Matrix& s, double tol_sym, double tol_psd) {
  require(s.rows() == s.cols(), "psd_sqrt: matrix must be square");
  require_finite(s, "psd_sqrt");
  const double scale = std::max(1.0, s.norm());
  if ((s - s.transpose()).norm() > tol_sym * scale)
    throw std::invalid_argument("psd_sqrt: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  if (es.info() != Eigen::Success) throw numeric_error("psd_sqrt: eigensolver failed");
  Vector w = es.eigenvalues();
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w(i) < -tol_psd * scale)
      throw std::invalid_argument("psd_sqrt: eigenvalue " + std::to_string(w(i)) +
                                  " below PSD tolerance");
    w(i) = w(i) > 0.0 ? std::sqrt(w(i)) : 0.0;
  }
  return es.eigenvectors() * w.asDiagonal() * es.eigenvectors().transpose();
}

Matrix pseudo_inverse(const Matrix& a, double tol) {
  require(tol > 0.0, "pseudo_inverse: tol must be positive");
  require_finite(a, "pseudo_inverse");
  auto svd = svd_of(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff = sv.size() > 0 ? tol * sv(0) : 0.0;
  Vector inv = Vector::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff && sv(i) > 0.0) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Eigen::Index numeric_rank(const Matrix& a, double tol) {
  require(tol > 0.0, "numeric_rank: tol must be positive");
  auto svd = svd_of(a, 0);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  const double cutoff = tol * sv(0);
  Eigen::Index r = 0;
  while (r < sv.size() && sv(r) > cutoff) ++r;
  return r;
}

SubspaceBasis kernel_basis(const Matrix& a, double tol) {
  require(tol > 0.0, "kernel_basis: tol must be positive");
  require_finite(a, "kernel_basis");
  auto svd = svd_of(a, Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  Eigen::Index r = 0;
  if (smax > 0.0)
    while (r < sv.size() && sv(r) > tol * smax) ++r;
  SubspaceBasis out;
  out.ambient_dim = a.cols();
  out.vectors = svd.matrixV().rightCols(a.cols() - r);
  return out;
}

SubspaceBasis range_basis(const Matrix& a, double tol) {
  require(tol > 0.0, "range_basis: tol must be positive");
  require_finite(a, "range_basis");
  auto svd = svd_of(a, Eigen::ComputeFullU);
  const Vector& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  Eigen::Index r = 0;
  if (smax > 0.0)
    while (r < sv.size() && sv(r) > tol * smax) ++r;
  SubspaceBasis out;
  out.ambient_dim = a.rows();
  out.vectors = svd.matrixU().leftCols(r);
  return out;
}

Vector oblique_project(const Vector& v, const SubspaceBasis& onto,
                       const SubspaceBasis& along, double cond_threshold) {
  require(onto.ambient_dim == along.ambient_dim && onto.ambient_dim == v.size(),
          "oblique_project: ambient dimensions disagree");
  const Eigen::Index n = v.size();
  require(onto.dim() + along.dim() == n,
          "oblique_project: bases do not span the ambient space");
  Matrix stacked(n, n);
  stacked.leftCols(onto.dim()) = onto.vectors;
  stacked.rightCols(along.dim()) = along.vectors;
  auto svd = svd_of(stacked, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  if (sv(n - 1) <= 0.0 || sv(0) / sv(n - 1) > cond_threshold)
    throw std::invalid_argument("oblique_project: bases do not form a direct sum");
  const Vector c = svd.solve(v);
  return onto.vectors * c.head(onto.dim());
}

bool is_semi_hurwitz(const Matrix& a, double tol) {
  require(a.rows() == a.cols(), "is_semi_hurwitz: matrix must be square");
  const auto lam = eigenvalues(a);
  Eigen::Index zero_count = 0;
  for (const Complex& l : lam) {
    if (std::abs(l) <= tol) {
      ++zero_count;
    } else if (!(l.real() < -tol)) {
      return false;  // imaginary-axis or right-half-plane eigenvalue
    }
  }
  if (zero_count == 0) return true;
  // Non-defective zero: rank(a) must equal n minus the zero multiplicity.
  return numeric_rank(a, tol) == a.rows() - zero_count;
}

bool is_semi_schur(const Matrix& a, double tol) {
  require(a.rows() == a.cols(), "is_semi_schur: matrix must be square");
  const auto lam = eigenvalues(a);
  Eigen::Index unit_count = 0;
  for (const Complex& l : lam) {
    if (std::abs(l - Complex(1.0, 0.0)) <= tol) {
      ++unit_count;
    } else if (!(std::abs(l) < 1.0 - tol)) {
      return false;
    }
  }
  if (unit_count == 0) return true;
  Matrix shifted = a;
  shifted.diagonal().array() -= 1.0;
  return numeric_rank(shifted, tol) == a.rows() - unit_count;
}

bool is_semi_schur_shifted(const Matrix& delta, double tol) {
  require(delta.rows() == delta.cols(), "is_semi_schur_shifted: matrix must be square");
  const auto lam = eigenvalues(delta);
  double scale = 0.0;
  for (const Complex& l : lam) scale = std::max(scale, std::abs(l));
  if (scale == 0.0) return true;  // delta = 0, phi = I
  Eigen::Index zero_count = 0;
  for (const Complex& l : lam) {
    if (std::abs(l) <= tol * scale) {
      ++zero_count;
    } else {
      // |1 + mu| < 1  <=>  2 Re(mu) + |mu|^2 < 0
      if (!(2.0 * l.real() + std::norm(l) < 0.0)) return false;
    }
  }
  if (zero_count == 0) return true;
  return numeric_rank(delta, tol) == delta.rows() - zero_count;
}

DiagonalizabilityReport diagonalizability_report(const Matrix& a, double cond_threshold) {
  const Eigendecomposition ed = eigendecomposition(a);
  Eigen::MatrixXcd v = ed.vectors;
  for (Eigen::Index i = 0; i < v.cols(); ++i) {
    const double nrm = v.col(i).norm();
    if (nrm > 0.0) v.col(i) /= nrm;
  }
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(v);
  const Vector& sv = svd.singularValues();
  DiagonalizabilityReport out;
  if (sv(sv.size() - 1) <= 0.0) {
    out.is_diagonalizable = false;
    out.cond_v = std::numeric_limits<double>::infinity();
  } else {
    out.cond_v = sv(0) / sv(sv.size() - 1);
    out.is_diagonalizable = out.cond_v <= cond_threshold;
  }
  return out;
}

double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  if (std::min(a.rows(), a.cols()) <= 512)
    return svd_of(a, 0).singularValues()(0);
  // Power iteration on a^T a for large matrices.
  Vector v = Vector::Ones(a.cols()).normalized();
  double prev = 0.0;
  for (int it = 0; it < 500; ++it) {
    Vector w = a.transpose() * (a * v);
    const double nrm = w.norm();
    if (nrm == 0.0) return 0.0;
    v = w / nrm;
    const double est = std::sqrt(nrm);
    if (it > 4 && std::abs(est - prev) <= 1e-13 * est) return est;
    prev = est;
  }
  return prev;
}

double max_principal_angle(const SubspaceBasis& b1, const SubspaceBasis& b2) {
  if (b1.dim() != b2.dim()) return M_PI;
  if (b1.dim() == 0) return 0.0;
  auto svd = svd_of(b1.vectors.transpose() * b2.vectors, 0);
  const double c = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
  return std::acos(c);
}

void write_matrix(const std::string& path, const Matrix& m) {
  require_finite(m, "write_matrix");
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("write_matrix: cannot open " + path);
  std::fprintf(f, "%" PRIdPTR " %" PRIdPTR "\n", static_cast<intptr_t>(m.rows()),
               static_cast<intptr_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      std::fprintf(f, j == 0 ? "%.17g" : " %.17g", m(i, j));
    std::fputc('\n', f);
  }
  std::fclose(f);
}

Matrix read_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_matrix: cannot open " + path);
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> rows >> cols) || rows < 0 || cols < 0)
    throw std::runtime_error("read_matrix: bad header in " + path);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      if (!(in >> m(i, j)))
        throw std::runtime_error("read_matrix: truncated data in " + path);
  if (!m.allFinite()) throw std::runtime_error("read_matrix: non-finite entry in " + path);
  return m;
}

}  // namespace dlsq
