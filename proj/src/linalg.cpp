#include "red/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace red {

namespace {

void requireSameShape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shapes " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

void requireAmbient(const Subspace& s, const Mat& v, const char* what) {
  if (v.rows() != s.ambientRows || v.cols() != s.ambientCols) {
    throw DimensionError(std::string(what) + ": argument " +
                         std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                         " does not live in the " + std::to_string(s.ambientRows) + "x" +
                         std::to_string(s.ambientCols) + " ambient space");
  }
}

}  // namespace

double frobInner(const Mat& a, const Mat& b) {
  requireSameShape(a, b, "frobInner");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      acc += a(i, j) * b(i, j);
    }
  }
  return acc;
}

double frobNorm(const Mat& a) { return std::sqrt(frobInner(a, a)); }

double relativeResidual(double absResidual, double lhsNorm, double rhsNorm) {
  return absResidual / std::max({lhsNorm, rhsNorm, 1e-300});
}

bool isOrthonormal(const Subspace& s, double tol) {
  for (std::size_t i = 0; i < s.basis.size(); ++i) {
    for (std::size_t j = i; j < s.basis.size(); ++j) {
      const double want = (i == j) ? 1.0 : 0.0;
      if (std::abs(frobInner(s.basis[i], s.basis[j]) - want) > tol) return false;
    }
  }
  return true;
}

Mat project(const Subspace& s, const Mat& v) {
  requireAmbient(s, v, "project");
  Mat out = Mat::Zero(v.rows(), v.cols());
  for (const Mat& u : s.basis) out += frobInner(v, u) * u;
  return out;
}

Mat projectComplement(const Subspace& s, const Mat& v) {
  requireAmbient(s, v, "projectComplement");
  Mat out = v;
  for (const Mat& u : s.basis) out -= frobInner(out, u) * u;
  return out;
}

Subspace orthonormalize(const std::vector<Mat>& vs, double rankTol) {
  if (vs.empty()) throw InputError("orthonormalize: empty input (ambient shape unknown)");
  const Eigen::Index rows = vs.front().rows();
  const Eigen::Index cols = vs.front().cols();

  double largest = 0.0;
  for (const Mat& v : vs) {
    requireSameShape(vs.front(), v, "orthonormalize");
    largest = std::max(largest, frobNorm(v));
  }

  Subspace out{rows, cols, {}};
  for (const Mat& v : vs) {
    Mat r = v;
    for (const Mat& u : out.basis) r -= frobInner(r, u) * u;
    const double rn = frobNorm(r);
    if (rn <= rankTol * largest) continue;
    out.basis.push_back(r / rn);
  }
  return out;
}

}  // namespace red
