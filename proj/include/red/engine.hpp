#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "red/jacobian.hpp"

namespace red {

// Forward images of the seed subspace at every operator tap. The residual
// taps propagate through the whole block map (identity plus branch), not
// through the branches separately.
struct SubspaceChain {
  std::vector<Subspace> atX;       // layer inputs; back() is the final-norm input
  std::vector<Subspace> atAttnIn;  // per layer
  std::vector<Subspace> atAttnOut;
  std::vector<Subspace> atMid;
  std::vector<Subspace> atMlpIn;
  std::vector<Subspace> atMlpOut;
  Subspace terminal;
  std::vector<std::pair<std::string, int>> rankRecord;
};

SubspaceChain propagateSubspaces(const PointLinearization& lin, const Subspace& u0,
                                 double rankTol = kDefaultRankTol);

// Pullbacks of the target direction to the residual-stream block boundaries.
// Index 2l is the input of layer l, 2l+1 sits between its two blocks, 2L is
// the final-norm input, 2L+1 is the target direction itself.
std::vector<Mat> backwardDirections(const PointLinearization& lin, const Mat& y);

// Leakage injected by each operator of one layer, before (b*) and after (s*)
// transport to the input. res*Id is the identity-branch part, res*Add the
// branch-reentry part of the corresponding residual add.
struct LayerSources {
  Mat bNorm1, bAttn, bRes1Add, bRes1Id;
  Mat bNorm2, bMlp, bRes2Add, bRes2Id;
  Mat sNorm1, sAttn, sRes1Add, sRes1Id;
  Mat sNorm2, sMlp, sRes2Add, sRes2Id;
};

struct SourceLedger {
  std::vector<LayerSources> layers;
  Mat bFinalNorm, sFinalNorm;
  Mat terminal;   // component of the target direction outside the terminal subspace
  Mat sTerminal;  // its full pullback to the input
};

SourceLedger localSources(const PointLinearization& lin, const SubspaceChain& chain, const Mat& y);
SourceLedger transportToInput(const PointLinearization& lin, SourceLedger ledger);

// Component of the input-side pullback of y outside u0.
Mat redDirection(const PointLinearization& lin, const Subspace& u0, const Mat& y);

enum class ProbeKind { UnitRDirect, CoordinateE1 };

struct DecompositionReport {
  Mat rDirect;
  Mat sNorm, sAttn, sMlp, sRes, sTerminal;
  double identityResidual = 0.0;  // absolute, ||rDirect - sum of families||
  double identityResidualRel = 0.0;
  double pullbackNorm = 0.0;  // norm of the full input-side pullback of y
  ProbeKind probe = ProbeKind::CoordinateE1;
  std::vector<std::pair<std::string, double>> sourceProjections;  // signed, per transported source
  std::map<std::string, double> familyProjections;
  std::map<std::string, double> familyNorms;
  std::map<std::string, double> consistency;
  std::vector<std::pair<std::string, int>> rankRecord;
};

DecompositionReport decomposeRed(const PointLinearization& lin, const Subspace& u0, const Mat& y,
                                 double rankTol = kDefaultRankTol);

// First-order change of the target-signal coefficient under dx.
double firstOrderEffect(const PointLinearization& lin, const Mat& y, const Mat& dx);

// Residuals of the boundary-to-boundary leakage recurrence, one per block.
std::vector<double> recurrenceResiduals(const PointLinearization& lin, const SubspaceChain& chain,
                                        const Mat& y);

// Magnitudes of the per-operator analytic vanishing conditions.
std::map<std::string, double> consistencyResiduals(const PointLinearization& lin,
                                                   const SubspaceChain& chain, const Mat& y);

}  // namespace red
