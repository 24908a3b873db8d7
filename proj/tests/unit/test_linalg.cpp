#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "tfnas/errors.hpp"
#include "tfnas/linalg.hpp"

namespace tfnas {
namespace {

using oracle::rel_err;

Tensor random_matrix(std::mt19937_64& rng, std::size_t p, std::size_t q) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(p * q);
  for (double& x : v) x = n(rng);
  return Tensor::from({p, q}, std::move(v));
}

Eigen::MatrixXd to_eigen(const Tensor& m) {
  Eigen::MatrixXd e(m.dim(0), m.dim(1));
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) e(i, j) = m[i * m.dim(1) + j];
  return e;
}

// Singular values as square roots of the eigenvalues of M^T M, descending.
std::vector<double> gram_oracle(const Tensor& m) {
  Eigen::MatrixXd e = to_eigen(m);
  Eigen::MatrixXd g = e.cols() <= e.rows() ? Eigen::MatrixXd(e.transpose() * e) : Eigen::MatrixXd(e * e.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(g);
  std::vector<double> out;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i)
    out.push_back(std::sqrt(std::max(0.0, solver.eigenvalues()(i))));
  std::sort(out.rbegin(), out.rend());
  return out;
}

TEST(Linalg, SpectrumRankOne) {
  auto ev = spectrum(Tensor::from({2, 2}, {1, -1, -1, 1}));
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_NEAR(ev[0], 2.0, 1e-14);
  EXPECT_NEAR(ev[1], 0.0, 1e-14);
}

TEST(Linalg, SpectrumMatchesEigenSolver) {
  std::mt19937_64 rng(1);
  for (std::size_t n : {1u, 2u, 5u, 17u, 40u}) {
    Tensor a = random_matrix(rng, n, n);
    Eigen::MatrixXd e = to_eigen(a);
    Eigen::MatrixXd s = e + e.transpose();
    std::vector<double> v(s.data(), s.data() + n * n);
    auto ev = spectrum(Tensor::from({n, n}, v));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s);
    std::vector<double> expected(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
    std::sort(expected.rbegin(), expected.rend());
    ASSERT_EQ(ev.size(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(ev[i], expected[i], 1e-10 * (1.0 + s.norm()));
    EXPECT_TRUE(std::is_sorted(ev.rbegin(), ev.rend()));
  }
}

TEST(Linalg, SpectrumRejectsBadInput) {
  EXPECT_THROW(spectrum(Tensor::from({2, 2}, {1, 2, 3, 4})), ContractError);
  EXPECT_THROW(spectrum(Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(spectrum(Tensor::zeros({4})), DimensionError);
}

TEST(Linalg, NuclearNormDiagonal) {
  EXPECT_NEAR(nuclear_norm(Tensor::from({2, 2}, {3, 0, 0, 4})), 7.0, 1e-14);
}

TEST(Linalg, SingularValuesRandom4x3AgainstGram) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor m = random_matrix(rng, 4, 3);
    auto sv = singular_values(m);
    auto expected = gram_oracle(m);
    ASSERT_EQ(sv.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(rel_err(sv[i], expected[i]), 1e-8);
  }
}

TEST(Linalg, SingularValuesWideTallAndRankDeficient) {
  std::mt19937_64 rng(9);
  for (auto [p, q] : {std::pair<std::size_t, std::size_t>{3, 7}, {12, 5}, {64, 32}, {1, 4}}) {
    Tensor m = random_matrix(rng, p, q);
    auto sv = singular_values(m);
    auto expected = gram_oracle(m);
    ASSERT_EQ(sv.size(), std::min(p, q));
    for (std::size_t i = 0; i < sv.size(); ++i) EXPECT_LT(rel_err(sv[i], expected[i]), 1e-8);
  }
  // Outer product u v^T has a single non-zero singular value |u| |v|.
  Tensor r = Tensor::from({3, 2}, {1, 2, 2, 4, 3, 6});
  auto sv = singular_values(r);
  EXPECT_NEAR(sv[0], std::sqrt(14.0) * std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(sv[1], 0.0, 1e-12);
  auto z = singular_values(Tensor::zeros({3, 3}));
  for (double s : z) EXPECT_EQ(s, 0.0);
}

TEST(Linalg, NuclearNormRotationInvariant) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> angle(0.0, 6.283185307179586);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t p = 5, q = 4;
    Tensor m = random_matrix(rng, p, q);
    const double before = nuclear_norm(m);
    Eigen::MatrixXd e = to_eigen(m);
    for (int g = 0; g < 6; ++g) {
      std::size_t i = rng() % p, j = (i + 1 + rng() % (p - 1)) % p;
      double th = angle(rng), c = std::cos(th), s = std::sin(th);
      Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(p, p);
      rot(i, i) = c;
      rot(j, j) = c;
      rot(i, j) = -s;
      rot(j, i) = s;
      e = rot * e;
      std::size_t a = rng() % q, b = (a + 1 + rng() % (q - 1)) % q;
      th = angle(rng), c = std::cos(th), s = std::sin(th);
      Eigen::MatrixXd right = Eigen::MatrixXd::Identity(q, q);
      right(a, a) = c;
      right(b, b) = c;
      right(a, b) = s;
      right(b, a) = -s;
      e = e * right;
    }
    std::vector<double> v;
    for (std::size_t r = 0; r < p; ++r)
      for (std::size_t c2 = 0; c2 < q; ++c2) v.push_back(e(r, c2));
    EXPECT_NEAR(nuclear_norm(Tensor::from({p, q}, v)), before, 1e-8);
  }
}

TEST(Linalg, LogDeterminantAgainstEigen) {
  std::mt19937_64 rng(33);
  for (std::size_t n : {1u, 2u, 6u, 20u}) {
    Tensor m = random_matrix(rng, n, n);
    auto ld = log_determinant(m);
    const double det = to_eigen(m).determinant();
    EXPECT_EQ(ld.sign, det > 0 ? 1.0 : -1.0);
    EXPECT_NEAR(ld.log_abs, std::log(std::abs(det)), 1e-10);
  }
  EXPECT_TRUE(log_determinant(Tensor::from({2, 2}, {1, 2, 2, 4})).singular());
  EXPECT_THROW(log_determinant(Tensor::zeros({2, 3})), DimensionError);
}

}  // namespace
}  // namespace tfnas
