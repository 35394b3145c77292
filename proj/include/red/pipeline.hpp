#pragma once

#include "red/engine.hpp"

namespace red {

// Two same-length token sequences with placeholder gaps, plus origin maps
// back into the unaligned inputs (-1 at gaps).
struct AlignmentResult {
  std::vector<int> alignedA, alignedB;
  std::vector<int> provenanceA, provenanceB;
};

// Recursive alignment: longest common contiguous block first (ties by
// smallest start pair), single best-similarity pair when no block exists
// (ties by smallest index pair), placeholder-padded otherwise.
AlignmentResult alignTokens(const Mat& embedding, const std::vector<int>& a,
                            const std::vector<int>& b);

// Straight-line interpolation between two embedded prompts.
struct PathSpec {
  Mat x0, xStar;
  double eta0 = 0.0, etaStar = 1.0;
  Mat tangent;  // (xStar - x0) / (etaStar - eta0)

  Mat at(double eta) const { return x0 + (eta - eta0) * tangent; }
};

PathSpec buildPath(const ModelParams& params, const AlignmentResult& alignment);

// Unit-norm target direction in the output space: the head-pullback of the
// final-token logit difference, placed in the final-token row.
Mat referenceTargetSubspace(const ModelParams& params, const Mat& xHarm, const Mat& xJail);

// Fixed input-space subspace: the normalized full pullback of the target
// direction at the clean prompt, rows scattered into the aligned length
// through the provenance map (gap rows zero).
Subspace referenceSemanticsSubspace(const ModelParams& params, const std::vector<int>& cleanIds,
                                    const Mat& yRef, const AlignmentResult& alignment);

Mat referenceRedAt(const ModelParams& params, const PathSpec& path, const Subspace& uRef,
                   const Mat& yRef, double eta);

}  // namespace red
