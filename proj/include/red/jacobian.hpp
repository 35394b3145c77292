#pragma once

#include <string>
#include <vector>

#include "red/model.hpp"

namespace red {

// One differentiable stage of the forward map. Blocks are the residual units
// (identity plus normalized branch); the plain tags address the branch pieces.
struct OpId {
  enum class Tag { AttnNorm, Attn, AttnBlock, MlpNorm, Mlp, MlpBlock, FinalNorm };
  Tag tag = Tag::FinalNorm;
  int layer = 0;

  static OpId attnNorm(int l) { return {Tag::AttnNorm, l}; }
  static OpId attn(int l) { return {Tag::Attn, l}; }
  static OpId attnBlock(int l) { return {Tag::AttnBlock, l}; }
  static OpId mlpNorm(int l) { return {Tag::MlpNorm, l}; }
  static OpId mlp(int l) { return {Tag::Mlp, l}; }
  static OpId mlpBlock(int l) { return {Tag::MlpBlock, l}; }
  static OpId finalNorm() { return {Tag::FinalNorm, 0}; }
};

std::string opName(const OpId& op);

// Frozen forward point: the trace plus every statistic the JVPs/VJPs need, so
// applying a Jacobian never re-runs any part of the forward map.
struct PointLinearization {
  ModelParams params;
  ForwardTrace trace;
  std::vector<Vec> attnNormStat;  // per layer, per row
  std::vector<Vec> mlpNormStat;
  Vec finalNormStat;
  std::vector<Mat> q, k, v;       // attention projections of attnIn
  std::vector<Mat> actDeriv;      // activation derivative at the MLP preactivation
};

PointLinearization linearize(const ModelParams& params, const Mat& x);

Mat opJvp(const PointLinearization& lin, const OpId& op, const Mat& dv);
Mat opVjp(const PointLinearization& lin, const OpId& op, const Mat& g);

// Input perturbation -> perturbation of the final-norm output, and its adjoint.
Mat fullJvp(const PointLinearization& lin, const Mat& dx);
Mat fullVjp(const PointLinearization& lin, const Mat& y);

// Central difference through the whole forward map.
Mat fdJvpOracle(const ModelParams& params, const Mat& x, const Mat& dx, double h = 1e-5);

// Row kernels, exposed for direct numeric checks.
RowVec normRowJvp(NormKind kind, const RowVec& z, const Vec& gain, double eps, const RowVec& dz);
RowVec normRowVjp(NormKind kind, const RowVec& z, const Vec& gain, double eps, const RowVec& a);
RowVec softmaxJvpRow(const RowVec& probs, const RowVec& ds);

}  // namespace red
