#include "red/pipeline.hpp"

#include <limits>
#include <tuple>

namespace red {

namespace {

void requireIds(const Mat& embedding, const std::vector<int>& ids, const char* what) {
  if (ids.empty()) throw InputError(std::string(what) + ": empty id sequence");
  for (int id : ids) {
    if (id < 0 || id >= embedding.rows()) {
      throw InputError(std::string(what) + ": token id " + std::to_string(id) + " out of range");
    }
  }
}

struct Aligner {
  const Mat& emb;
  const std::vector<int>& a;
  const std::vector<int>& b;
  AlignmentResult out;

  void emitA(int i) {
    out.alignedA.push_back(a[static_cast<std::size_t>(i)]);
    out.provenanceA.push_back(i);
  }
  void emitB(int j) {
    out.alignedB.push_back(b[static_cast<std::size_t>(j)]);
    out.provenanceB.push_back(j);
  }
  void emitGapA() {
    out.alignedA.push_back(kPlaceholderId);
    out.provenanceA.push_back(-1);
  }
  void emitGapB() {
    out.alignedB.push_back(kPlaceholderId);
    out.provenanceB.push_back(-1);
  }

  // longest common contiguous block, ties by smallest (startA, startB)
  std::tuple<int, int, int> longestBlock(int aLo, int aHi, int bLo, int bHi) const {
    const int na = aHi - aLo, nb = bHi - bLo;
    std::vector<int> prev(static_cast<std::size_t>(nb) + 1, 0);
    std::vector<int> cur(static_cast<std::size_t>(nb) + 1, 0);
    int bestLen = 0, bestA = 0, bestB = 0;
    for (int i = 1; i <= na; ++i) {
      for (int j = 1; j <= nb; ++j) {
        const bool match = a[static_cast<std::size_t>(aLo + i - 1)] ==
                           b[static_cast<std::size_t>(bLo + j - 1)];
        cur[static_cast<std::size_t>(j)] = match ? prev[static_cast<std::size_t>(j - 1)] + 1 : 0;
        const int len = cur[static_cast<std::size_t>(j)];
        if (len > 0) {
          const int sA = aLo + i - len, sB = bLo + j - len;
          if (len > bestLen ||
              (len == bestLen && (sA < bestA || (sA == bestA && sB < bestB)))) {
            bestLen = len;
            bestA = sA;
            bestB = sB;
          }
        }
      }
      std::swap(prev, cur);
    }
    return {bestA, bestB, bestLen};
  }

  // highest embedding inner product, ties by smallest (i, j)
  std::pair<int, int> bestPair(int aLo, int aHi, int bLo, int bHi) const {
    int bi = aLo, bj = bLo;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = aLo; i < aHi; ++i) {
      for (int j = bLo; j < bHi; ++j) {
        const double sim = emb.row(a[static_cast<std::size_t>(i)])
                               .dot(emb.row(b[static_cast<std::size_t>(j)]));
        if (sim > best) {
          best = sim;
          bi = i;
          bj = j;
        }
      }
    }
    return {bi, bj};
  }

  void run(int aLo, int aHi, int bLo, int bHi) {
    if (aLo >= aHi && bLo >= bHi) return;
    if (aLo >= aHi) {
      for (int j = bLo; j < bHi; ++j) {
        emitGapA();
        emitB(j);
      }
      return;
    }
    if (bLo >= bHi) {
      for (int i = aLo; i < aHi; ++i) {
        emitA(i);
        emitGapB();
      }
      return;
    }
    auto [sA, sB, len] = longestBlock(aLo, aHi, bLo, bHi);
    if (len > 0) {
      run(aLo, sA, bLo, sB);
      for (int t = 0; t < len; ++t) {
        emitA(sA + t);
        emitB(sB + t);
      }
      run(sA + len, aHi, sB + len, bHi);
      return;
    }
    auto [iStar, jStar] = bestPair(aLo, aHi, bLo, bHi);
    run(aLo, iStar, bLo, jStar);
    emitA(iStar);
    emitB(jStar);
    run(iStar + 1, aHi, jStar + 1, bHi);
  }
};

}  // namespace

AlignmentResult alignTokens(const Mat& embedding, const std::vector<int>& a,
                            const std::vector<int>& b) {
  requireIds(embedding, a, "alignTokens(a)");
  requireIds(embedding, b, "alignTokens(b)");
  Aligner al{embedding, a, b, {}};
  al.run(0, static_cast<int>(a.size()), 0, static_cast<int>(b.size()));
  return std::move(al.out);
}

PathSpec buildPath(const ModelParams& params, const AlignmentResult& alignment) {
  if (alignment.alignedA.size() != alignment.alignedB.size() || alignment.alignedA.empty()) {
    throw InputError("buildPath: aligned sequences must be nonempty and of equal length");
  }
  PathSpec path;
  path.x0 = embed(params, alignment.alignedA);
  path.xStar = embed(params, alignment.alignedB);
  path.eta0 = 0.0;
  path.etaStar = 1.0;
  path.tangent = (path.xStar - path.x0) / (path.etaStar - path.eta0);
  return path;
}

Mat referenceTargetSubspace(const ModelParams& params, const Mat& xHarm, const Mat& xJail) {
  if (xHarm.rows() != xJail.rows() || xHarm.cols() != xJail.cols()) {
    throw DimensionError("referenceTargetSubspace: inputs must share a shape");
  }
  const Vec lHarm = forward(params, xHarm).logits;
  const Vec lJail = forward(params, xJail).logits;
  const Vec y = params.wOut.transpose() * (lJail - lHarm);

  Mat raw = Mat::Zero(xHarm.rows(), xHarm.cols());
  raw.row(raw.rows() - 1) = y.transpose();
  const double nrm = frobNorm(raw);
  if (nrm <= 1e-12) {
    throw DegenerateError("referenceTargetSubspace: logit difference pullback is numerically zero");
  }
  return raw / nrm;
}

Subspace referenceSemanticsSubspace(const ModelParams& params, const std::vector<int>& cleanIds,
                                    const Mat& yRef, const AlignmentResult& alignment) {
  const Eigen::Index n = yRef.rows();
  const Eigen::Index d = yRef.cols();
  if (static_cast<Eigen::Index>(alignment.provenanceA.size()) != n) {
    throw DimensionError("referenceSemanticsSubspace: alignment length does not match yRef");
  }
  const Mat xClean = embed(params, cleanIds);
  const Eigen::Index nClean = xClean.rows();

  int realRows = 0;
  for (int k : alignment.provenanceA) {
    if (k >= 0) {
      if (k >= nClean) throw InputError("referenceSemanticsSubspace: provenance out of range");
      ++realRows;
    }
  }
  if (realRows != static_cast<int>(nClean)) {
    throw InputError("referenceSemanticsSubspace: alignment does not cover the clean prompt");
  }

  // target direction rebuilt at the clean length: same final-row content
  Mat yClean = Mat::Zero(nClean, d);
  yClean.row(nClean - 1) = yRef.row(n - 1);

  const PointLinearization lin = linearize(params, xClean);
  const Mat pullback = fullVjp(lin, yClean);
  if (frobNorm(pullback) <= 1e-12) {
    throw DegenerateError("referenceSemanticsSubspace: pullback at the clean prompt is zero");
  }
  const Subspace clean = orthonormalize({pullback});
  if (clean.basis.empty()) {
    throw DegenerateError("referenceSemanticsSubspace: pullback dropped as rank deficient");
  }

  // scatter rows through the provenance map; gap rows stay zero, so the
  // basis stays orthonormal
  Mat u = Mat::Zero(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = alignment.provenanceA[static_cast<std::size_t>(i)];
    if (k >= 0) u.row(i) = clean.basis.front().row(k);
  }
  return Subspace{n, d, {u}};
}

Mat referenceRedAt(const ModelParams& params, const PathSpec& path, const Subspace& uRef,
                   const Mat& yRef, double eta) {
  const PointLinearization lin = linearize(params, path.at(eta));
  return redDirection(lin, uRef, yRef);
}

}  // namespace red
