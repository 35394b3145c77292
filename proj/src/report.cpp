#include "red/report.hpp"

#include <algorithm>

namespace red {

namespace {

Mat rebuildAtLength(const Mat& yRef, Eigen::Index n) {
  Mat y = Mat::Zero(n, yRef.cols());
  y.row(n - 1) = yRef.row(yRef.rows() - 1);
  return y;
}

}  // namespace

OrderedJson runPointReport(const ModelParams& params, const PromptPair& pair,
                           const RunConfig& cfg) {
  const AlignmentResult alignment =
      alignTokens(params.embedding, pair.harmfulIds, pair.jailbreakIds);
  const PathSpec path = buildPath(params, alignment);
  const Mat yRef = referenceTargetSubspace(params, path.x0, path.xStar);

  // clean prompt: seed subspace spanned by the pullback itself, so the
  // escape direction vanishes by construction
  const Mat xClean = embed(params, pair.harmfulIds);
  const Mat yClean = rebuildAtLength(yRef, xClean.rows());
  const PointLinearization linClean = linearize(params, xClean);
  const Mat pullClean = fullVjp(linClean, yClean);
  if (frobNorm(pullClean) <= 1e-12) {
    throw DegenerateError("runPointReport: pullback at the clean prompt is zero");
  }
  const Subspace u0Clean = orthonormalize({pullClean}, cfg.rankTol);
  const DecompositionReport repClean = decomposeRed(linClean, u0Clean, yClean, cfg.rankTol);

  // padded prompt with the fixed reference subspace
  const Subspace uRef = referenceSemanticsSubspace(params, pair.harmfulIds, yRef, alignment);
  const PointLinearization linPadded = linearize(params, path.x0);
  const DecompositionReport repPadded = decomposeRed(linPadded, uRef, yRef, cfg.rankTol);

  OrderedJson j;
  j["alignment"] = alignmentToJson(alignment);
  j["clean"] = reportToJson(repClean);
  j["padded"] = reportToJson(repPadded);
  return j;
}

PathReport runPathReport(const ModelParams& params, const PromptPair& pair, const RunConfig& cfg) {
  const AlignmentResult alignment =
      alignTokens(params.embedding, pair.harmfulIds, pair.jailbreakIds);
  const PathSpec path = buildPath(params, alignment);

  PathReport out;
  auto degenerateReport = [&](const std::string& reason) {
    out.degenerate = true;
    out.json["degenerate_path"] = true;
    out.json["warning"] = reason;
    out.json["alignment"] = alignmentToJson(alignment);
    out.csv = "eta,metric,value\n";
    return out;
  };

  const double tangentNorm = frobNorm(path.tangent);
  if (tangentNorm <= 1e-12 * std::max(1.0, frobNorm(path.x0))) {
    return degenerateReport("path tangent is numerically zero");
  }

  Mat yRef;
  try {
    yRef = referenceTargetSubspace(params, path.x0, path.xStar);
  } catch (const DegenerateError& e) {
    return degenerateReport(e.what());
  }
  const Subspace uRef = referenceSemanticsSubspace(params, pair.harmfulIds, yRef, alignment);

  const std::vector<GridPoint> grid = signalGrid(params, path, yRef, cfg.nGrid);
  const ExtractionResult extraction =
      extractIntermediatePoints(grid, cfg.budget, cfg.activityEps);

  std::vector<PathSample> samples;
  for (double eta : {extraction.eta1, extraction.eta2, extraction.eta3, extraction.eta4,
                     extraction.eta5}) {
    samples.push_back(samplePath(params, path, uRef, yRef, eta, cfg.denomTolScale));
  }
  const DisplacementCheck disp = cumulativeDisplacementCheck(params, path, yRef, cfg.nQuad);

  out.json["degenerate_path"] = false;
  out.json["alignment"] = alignmentToJson(alignment);
  out.json["extraction"] = extractionToJson(extraction);
  OrderedJson js = OrderedJson::array();
  for (const PathSample& s : samples) js.push_back(sampleToJson(s));
  out.json["samples"] = std::move(js);
  OrderedJson dj;
  dj["n_quad"] = cfg.nQuad;
  dj["integral"] = disp.integral;
  dj["endpoint"] = disp.endpoint;
  dj["residual"] = disp.residual;
  out.json["displacement_check"] = std::move(dj);
  out.csv = pathSamplesCsv(samples);
  return out;
}

}  // namespace red
