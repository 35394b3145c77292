#pragma once

#include <Eigen/Core>
#include <vector>

#include "red/errors.hpp"

namespace red {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

constexpr double kDefaultRankTol = 1e-9;

// Frobenius inner product, accumulated in row-major index order so the
// reduction order (and hence the bit pattern of the result) is pinned.
double frobInner(const Mat& a, const Mat& b);
double frobNorm(const Mat& a);

// abs / max(lhs, rhs, 1e-300)
double relativeResidual(double absResidual, double lhsNorm, double rhsNorm);

// A subspace of the n x d matrix space with a Frobenius-orthonormal basis.
// An empty basis is the zero subspace: projection maps to zero, complement
// projection is the identity.
struct Subspace {
  Eigen::Index ambientRows = 0;
  Eigen::Index ambientCols = 0;
  std::vector<Mat> basis;

  static Subspace zero(Eigen::Index rows, Eigen::Index cols) {
    return Subspace{rows, cols, {}};
  }
  int dim() const { return static_cast<int>(basis.size()); }
};

bool isOrthonormal(const Subspace& s, double tol = 1e-10);

Mat project(const Subspace& s, const Mat& v);
Mat projectComplement(const Subspace& s, const Mat& v);

// Modified Gram-Schmidt over the input order. A direction is dropped when its
// residual norm after projecting out the kept ones is <= rankTol times the
// largest input norm.
Subspace orthonormalize(const std::vector<Mat>& vs, double rankTol = kDefaultRankTol);

}  // namespace red
