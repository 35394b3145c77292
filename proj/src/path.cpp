#include "red/path.hpp"

#include <algorithm>
#include <cmath>

namespace red {

namespace {

constexpr double kLevelTol = 1e-12;     // at-baseline / at-final signal tolerance
constexpr double kActivityFloor = 1e-12;  // denominator guard in the activity ratio

struct Interval {
  int lo = 0, hi = 0;
  double activity = 0.0;
};

double activityOf(const std::vector<GridPoint>& grid, int lo, int hi, double total) {
  return std::abs(grid[static_cast<std::size_t>(hi)].signal -
                  grid[static_cast<std::size_t>(lo)].signal) /
         (total + kActivityFloor);
}

}  // namespace

std::vector<GridPoint> signalGrid(const ModelParams& params, const PathSpec& path, const Mat& yRef,
                                  int nGrid) {
  if (nGrid < 2) throw InputError("signalGrid: need at least two grid points");
  std::vector<GridPoint> out;
  out.reserve(static_cast<std::size_t>(nGrid));
  for (int i = 0; i < nGrid; ++i) {
    const double eta =
        path.eta0 + (path.etaStar - path.eta0) * static_cast<double>(i) / (nGrid - 1);
    const double coeff = frobInner(forward(params, path.at(eta)).hidden, yRef);
    out.push_back(GridPoint{eta, std::abs(coeff), coeff});
  }
  return out;
}

ExtractionResult extractIntermediatePoints(const std::vector<GridPoint>& grid, int budget,
                                           double activityEps) {
  if (grid.size() < 2) throw InputError("extractIntermediatePoints: need at least two grid points");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i].eta > grid[i - 1].eta)) {
      throw InputError("extractIntermediatePoints: grid etas must be strictly increasing");
    }
  }

  ExtractionResult res;
  res.grid = grid;
  const int last = static_cast<int>(grid.size()) - 1;
  const double s0 = grid.front().signal;
  const double sF = grid.back().signal;
  const double total = std::abs(sF - s0);

  if (total <= kLevelTol) {
    // flat signal: uniform quantiles over the whole grid range
    res.degenerate = true;
    res.eta1 = grid.front().eta;
    res.eta5 = grid.back().eta;
    const double span = res.eta5 - res.eta1;
    res.eta2 = res.eta1 + 0.25 * span;
    res.eta3 = res.eta1 + 0.50 * span;
    res.eta4 = res.eta1 + 0.75 * span;
    return res;
  }

  int i5 = last;
  for (int i = 0; i <= last; ++i) {
    if (std::abs(grid[static_cast<std::size_t>(i)].signal - sF) <= kLevelTol) {
      i5 = i;
      break;
    }
  }
  int i1 = 0;
  for (int i = i5; i >= 0; --i) {
    if (grid[static_cast<std::size_t>(i)].signal <= s0 + kLevelTol) {
      i1 = i;
      break;
    }
  }
  res.eta1 = grid[static_cast<std::size_t>(i1)].eta;
  res.eta5 = grid[static_cast<std::size_t>(i5)].eta;

  // largest-activity bisection on grid indices
  std::vector<Interval> intervals;
  if (i5 > i1) intervals.push_back(Interval{i1, i5, activityOf(grid, i1, i5, total)});
  int splits = 0;
  while (splits < budget) {
    int pick = -1;
    double best = activityEps;
    for (std::size_t k = 0; k < intervals.size(); ++k) {
      const Interval& iv = intervals[k];
      if (iv.hi - iv.lo < 2) continue;  // nothing between the endpoints
      if (iv.activity > best) {
        best = iv.activity;
        pick = static_cast<int>(k);
      }
    }
    if (pick < 0) break;
    const Interval iv = intervals[static_cast<std::size_t>(pick)];
    res.refinement.push_back(SplitRecord{grid[static_cast<std::size_t>(iv.lo)].eta,
                                         grid[static_cast<std::size_t>(iv.hi)].eta, iv.activity});
    const int mid = (iv.lo + iv.hi) / 2;
    intervals[static_cast<std::size_t>(pick)] =
        Interval{iv.lo, mid, activityOf(grid, iv.lo, mid, total)};
    intervals.insert(intervals.begin() + pick + 1,
                     Interval{mid, iv.hi, activityOf(grid, mid, iv.hi, total)});
    ++splits;
  }

  // boundary set, ordered
  std::vector<int> bounds;
  bounds.push_back(i1);
  for (const Interval& iv : intervals) bounds.push_back(iv.hi);
  std::sort(bounds.begin(), bounds.end());
  bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());

  // accumulated signal change along the boundaries
  std::vector<double> cum(bounds.size(), 0.0);
  for (std::size_t k = 1; k < bounds.size(); ++k) {
    cum[k] = cum[k - 1] + std::abs(grid[static_cast<std::size_t>(bounds[k])].signal -
                                   grid[static_cast<std::size_t>(bounds[k - 1])].signal);
  }
  const double reach = cum.back();

  double* etas[3] = {&res.eta2, &res.eta3, &res.eta4};
  std::size_t from = 0;
  for (int q = 0; q < 3; ++q) {
    if (reach <= 0.0) {
      *etas[q] = res.eta1 + 0.25 * (q + 1) * (res.eta5 - res.eta1);
      continue;
    }
    const double target = 0.25 * (q + 1) * reach;
    std::size_t bestK = from;
    double bestDist = std::abs(cum[from] - target);
    for (std::size_t k = from + 1; k < bounds.size(); ++k) {
      const double dist = std::abs(cum[k] - target);
      if (dist < bestDist) {
        bestDist = dist;
        bestK = k;
      }
    }
    *etas[q] = grid[static_cast<std::size_t>(bounds[bestK])].eta;
    from = bestK;
  }
  return res;
}

RhoResult rhoRatio(const ModelParams& params, const PathSpec& path, const Subspace& uRef,
                   const Mat& yRef, double eta, double denomTolScale) {
  const PointLinearization lin = linearize(params, path.at(eta));
  const Mat pullback = fullVjp(lin, yRef);
  const Mat red = projectComplement(uRef, pullback);

  RhoResult r;
  r.numerator = frobInner(path.tangent, red);
  r.denominator = frobInner(path.tangent, pullback);
  const double tol = denomTolScale * frobNorm(path.tangent) * frobNorm(pullback);
  r.defined = std::abs(r.denominator) > tol;
  r.value = r.defined ? r.numerator / r.denominator : 0.0;
  return r;
}

std::map<std::string, double> familyAlignments(const ModelParams& params, const PathSpec& path,
                                               const Subspace& uRef, const Mat& yRef, double eta) {
  const PointLinearization lin = linearize(params, path.at(eta));
  const DecompositionReport rep = decomposeRed(lin, uRef, yRef);
  std::map<std::string, double> out;
  out["norm"] = frobInner(path.tangent, rep.sNorm);
  out["attn"] = frobInner(path.tangent, rep.sAttn);
  out["mlp"] = frobInner(path.tangent, rep.sMlp);
  out["res"] = frobInner(path.tangent, rep.sRes);
  out["terminal"] = frobInner(path.tangent, rep.sTerminal);
  return out;
}

DisplacementCheck cumulativeDisplacementCheck(const ModelParams& params, const PathSpec& path,
                                              const Mat& yRef, int nQuad) {
  if (nQuad < 1) throw InputError("cumulativeDisplacementCheck: need at least one panel");
  const double h = (path.etaStar - path.eta0) / nQuad;

  DisplacementCheck out;
  for (int k = 0; k <= nQuad; ++k) {
    const double eta = path.eta0 + h * k;
    const PointLinearization lin = linearize(params, path.at(eta));
    const double flux = frobInner(fullJvp(lin, path.tangent), yRef);
    out.integral += (k == 0 || k == nQuad) ? 0.5 * flux : flux;
  }
  out.integral *= h;

  const Mat hEnd = forward(params, path.at(path.etaStar)).hidden;
  const Mat hStart = forward(params, path.at(path.eta0)).hidden;
  out.endpoint = frobInner(hEnd - hStart, yRef);
  out.residual = std::abs(out.integral - out.endpoint);
  return out;
}

PathSample samplePath(const ModelParams& params, const PathSpec& path, const Subspace& uRef,
                      const Mat& yRef, double eta, double denomTolScale) {
  const PointLinearization lin = linearize(params, path.at(eta));

  PathSample s;
  s.eta = eta;
  s.coeff = frobInner(lin.trace.hidden, yRef);
  s.signal = std::abs(s.coeff);

  const Mat pullback = fullVjp(lin, yRef);
  const Mat red = projectComplement(uRef, pullback);
  s.redNorm = frobNorm(red);
  s.rho.numerator = frobInner(path.tangent, red);
  s.rho.denominator = frobInner(path.tangent, pullback);
  const double tol = denomTolScale * frobNorm(path.tangent) * frobNorm(pullback);
  s.rho.defined = std::abs(s.rho.denominator) > tol;
  s.rho.value = s.rho.defined ? s.rho.numerator / s.rho.denominator : 0.0;

  const DecompositionReport rep = decomposeRed(lin, uRef, yRef);
  s.alignments["norm"] = frobInner(path.tangent, rep.sNorm);
  s.alignments["attn"] = frobInner(path.tangent, rep.sAttn);
  s.alignments["mlp"] = frobInner(path.tangent, rep.sMlp);
  s.alignments["res"] = frobInner(path.tangent, rep.sRes);
  s.alignments["terminal"] = frobInner(path.tangent, rep.sTerminal);
  return s;
}

}  // namespace red
