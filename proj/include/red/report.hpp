#pragma once

#include "red/serialize.hpp"

namespace red {

struct RunConfig {
  std::string modelPath, pairPath, outPath, csvPath;
  std::uint64_t seed = 2026;
  int nGrid = 101;
  int nQuad = 4096;
  int budget = 32;
  double rankTol = kDefaultRankTol;
  double denomTolScale = 1e-10;
  double activityEps = 1e-3;
  double fdH = 1e-5;
};

// Mirror-pair report: the decomposition at the clean prompt against the
// decomposition at the placeholder-padded prompt with the fixed reference
// subspace. Throws DegenerateError when the target direction vanishes.
OrderedJson runPointReport(const ModelParams& params, const PromptPair& pair,
                           const RunConfig& cfg);

struct PathReport {
  OrderedJson json;
  std::string csv;
  bool degenerate = false;
};

PathReport runPathReport(const ModelParams& params, const PromptPair& pair, const RunConfig& cfg);

}  // namespace red
