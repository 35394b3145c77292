#pragma once

#include "red/pipeline.hpp"

namespace red {

struct GridPoint {
  double eta = 0.0;
  double signal = 0.0;  // |coeff|
  double coeff = 0.0;   // signed target-signal coefficient
};

std::vector<GridPoint> signalGrid(const ModelParams& params, const PathSpec& path, const Mat& yRef,
                                  int nGrid);

struct SplitRecord {
  double lo = 0.0, hi = 0.0;
  double activity = 0.0;
};

struct ExtractionResult {
  double eta1 = 0.0, eta2 = 0.0, eta3 = 0.0, eta4 = 0.0, eta5 = 0.0;
  std::vector<GridPoint> grid;
  std::vector<SplitRecord> refinement;
  bool degenerate = false;  // flat signal, uniform-quantile fallback
};

// Signal-guided selection of the five path markers: eta1 last at-baseline
// point, eta5 earliest at-final point, eta2..eta4 at the quarter points of
// the accumulated signal change between them, located by largest-activity
// interval bisection over the grid.
ExtractionResult extractIntermediatePoints(const std::vector<GridPoint>& grid, int budget = 32,
                                           double activityEps = 1e-3);

struct RhoResult {
  double value = 0.0;
  bool defined = false;  // false when the denominator is below tolerance
  double numerator = 0.0, denominator = 0.0;
};

RhoResult rhoRatio(const ModelParams& params, const PathSpec& path, const Subspace& uRef,
                   const Mat& yRef, double eta, double denomTolScale = 1e-10);

std::map<std::string, double> familyAlignments(const ModelParams& params, const PathSpec& path,
                                               const Subspace& uRef, const Mat& yRef, double eta);

struct DisplacementCheck {
  double integral = 0.0;
  double endpoint = 0.0;
  double residual = 0.0;  // absolute
};

// Trapezoid integral of the first-order signal flux along the path against
// the endpoint signal difference.
DisplacementCheck cumulativeDisplacementCheck(const ModelParams& params, const PathSpec& path,
                                              const Mat& yRef, int nQuad);

struct PathSample {
  double eta = 0.0;
  double signal = 0.0;
  double coeff = 0.0;
  double redNorm = 0.0;
  RhoResult rho;
  std::map<std::string, double> alignments;
};

PathSample samplePath(const ModelParams& params, const PathSpec& path, const Subspace& uRef,
                      const Mat& yRef, double eta, double denomTolScale = 1e-10);

}  // namespace red
