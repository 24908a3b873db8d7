#include "tfnas/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include <Eigen/QR>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

void require_matrix(const Tensor& m, const char* op) {
  if (!m.defined() || m.rank() != 2) throw DimensionError(std::string(op) + ": expected a 2-d tensor");
}

// Rotation (c, s) that annihilates the off-diagonal entry of [[app, apq], [apq, aqq]].
void jacobi_rotation(double app, double aqq, double apq, double& c, double& s) {
  const double tau = (aqq - app) / (2.0 * apq);
  const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::hypot(1.0, tau));
  c = 1.0 / std::hypot(1.0, t);
  s = t * c;
}

}  // namespace

std::vector<double> spectrum(const Tensor& m, const JacobiOptions& options) {
  require_matrix(m, "spectrum");
  const auto n = m.dim(0);
  if (m.dim(1) != n) throw DimensionError("spectrum: matrix must be square, got " + shape_string(m.shape()));
  std::vector<double> a(m.values().begin(), m.values().end());
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a[i * n + j] - a[j * n + i]) > 1e-9 * std::max(1.0, scale)) {
        throw ContractError("spectrum: matrix is not symmetric at (" + std::to_string(i) + ", " + std::to_string(j) +
                            ")");
      }
    }
  }
  // Symmetrize exactly so rotations keep the matrix symmetric.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = a[j * n + i] = 0.5 * (a[i * n + j] + a[j * n + i]);
  }
  double frob = 0.0;
  for (double v : a) frob += v * v;
  frob = std::sqrt(frob);

  bool converged = false;
  for (int sweep = 0; sweep <= options.max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) off += 2.0 * a[i * n + j] * a[i * n + j];
    }
    if (std::sqrt(off) <= options.tolerance * frob) {
      converged = true;
      break;
    }
    if (sweep == options.max_sweeps) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        double c, s;
        jacobi_rotation(a[p * n + p], a[q * n + q], apq, c, s);
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        a[p * n + q] = a[q * n + p] = 0.0;
      }
    }
  }
  if (!converged) {
    throw NumericError("spectrum: Jacobi iteration did not converge in " + std::to_string(options.max_sweeps) +
                       " sweeps");
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

std::vector<double> singular_values(const Tensor& m, const JacobiOptions& options) {
  require_matrix(m, "singular_values");
  auto rows = m.dim(0), cols = m.dim(1);
  const bool transpose = rows < cols;
  if (transpose) std::swap(rows, cols);
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Matrix> view(m.values().data(), static_cast<Eigen::Index>(m.dim(0)),
                                static_cast<Eigen::Index>(m.dim(1)));
  const auto n = static_cast<Eigen::Index>(cols);
  // A tall matrix shares its singular values with the triangular factor of
  // its QR decomposition, so the rotations run on a cols x cols problem.
  Eigen::MatrixXd r;
  if (transpose) {
    r = Eigen::HouseholderQR<Eigen::MatrixXd>(view.transpose()).matrixQR().topRows(n).triangularView<Eigen::Upper>();
  } else {
    r = Eigen::HouseholderQR<Eigen::MatrixXd>(view).matrixQR().topRows(n).triangularView<Eigen::Upper>();
  }
  rows = cols;
  // Column-major storage keeps each column contiguous.
  std::vector<double> u(r.data(), r.data() + r.size());
  double frobenius = 0.0;
  for (double x : u) frobenius += x * x;
  // Columns below 1e-16 of the matrix norm carry no resolvable rotation.
  const double negligible = frobenius * 1e-32;
  auto column = [&](std::size_t j) { return u.data() + j * rows; };

  bool converged = false;
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < cols; ++i) {
      for (std::size_t j = i + 1; j < cols; ++j) {
        double* ui = column(i);
        double* uj = column(j);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t k = 0; k < rows; ++k) {
          alpha += ui[k] * ui[k];
          beta += uj[k] * uj[k];
          gamma += ui[k] * uj[k];
        }
        if (gamma == 0.0 || std::abs(gamma) <= options.tolerance * std::sqrt(alpha * beta)) continue;
        if (alpha <= negligible || beta <= negligible) continue;
        rotated = true;
        double c, s;
        jacobi_rotation(alpha, beta, gamma, c, s);
        for (std::size_t k = 0; k < rows; ++k) {
          const double a = ui[k], b = uj[k];
          ui[k] = c * a - s * b;
          uj[k] = s * a + c * b;
        }
      }
    }
    if (!rotated) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw NumericError("singular_values: one-sided Jacobi did not converge in " +
                       std::to_string(options.max_sweeps) + " sweeps");
  }
  std::vector<double> sigma(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    double norm = 0.0;
    for (std::size_t k = 0; k < rows; ++k) norm += column(j)[k] * column(j)[k];
    sigma[j] = std::sqrt(norm);
  }
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

double nuclear_norm(const Tensor& m, const JacobiOptions& options) {
  double total = 0.0;
  for (double s : singular_values(m, options)) total += s;
  return total;
}

LogDet log_determinant(const Tensor& m, double relative_pivot_floor) {
  require_matrix(m, "log_determinant");
  const auto n = m.dim(0);
  if (m.dim(1) != n) throw DimensionError("log_determinant: matrix must be square");
  std::vector<double> a(m.values().begin(), m.values().end());
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  LogDet out{1.0, 0.0};
  if (scale == 0.0) return LogDet{};
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(a[i * n + k]) > std::abs(a[pivot * n + k])) pivot = i;
    }
    const double p = a[pivot * n + k];
    if (std::abs(p) <= relative_pivot_floor * scale) return LogDet{};
    if (pivot != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[pivot * n + j]);
      out.sign = -out.sign;
    }
    if (p < 0.0) out.sign = -out.sign;
    out.log_abs += std::log(std::abs(p));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i * n + k] / p;
      if (f == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
    }
  }
  return out;
}

}  // namespace tfnas
