#include "red/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "red/rng.hpp"

namespace red {

namespace {

using Clock = std::chrono::steady_clock;

double secondsSince(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Mat randomMat(SplitMix64& g, Eigen::Index r, Eigen::Index c) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g.symmetric();
  }
  return m;
}

ModelConfig smallConfig(int d, int layers, int heads, NormKind kind, Activation act) {
  ModelConfig c;
  c.dModel = d;
  c.nLayers = layers;
  c.nHeads = heads;
  c.dHead = d / heads;
  c.dMlp = 2 * d;
  c.vocabSize = 16;
  c.normKind = kind;
  c.activation = act;
  c.normEpsilon = 1e-5;
  c.causalMask = true;
  return c;
}

NormKind kindOf(std::uint64_t idx) {
  return (idx % 2 == 0) ? NormKind::RmsNorm : NormKind::LayerNorm;
}

Activation actOf(std::uint64_t idx) {
  return (idx / 2 % 2 == 0) ? Activation::Tanh : Activation::Gelu;
}

struct Instance {
  ModelParams params;
  Mat x;
  Subspace u0;
  Mat y;
  PointLinearization lin;
};

Instance randomInstance(SplitMix64& g, std::uint64_t modelSeed) {
  const int n = 2 + static_cast<int>(g.below(5));
  const int d = (g.below(2) == 0) ? 4 : 8;
  const int heads = (d == 4) ? (g.below(2) == 0 ? 1 : 2)
                             : (g.below(3) == 0 ? 1 : (g.below(2) == 0 ? 2 : 4));
  const int layers = 1 + static_cast<int>(g.below(3));
  const ModelConfig cfg = smallConfig(d, layers, heads, kindOf(g.next()), actOf(g.next()));

  Instance inst;
  inst.params = generateParams(cfg, modelSeed);
  inst.x = randomMat(g, n, d);
  const int dim = 1 + static_cast<int>(g.below(3));
  std::vector<Mat> seedDirs;
  for (int k = 0; k < dim; ++k) seedDirs.push_back(randomMat(g, n, d));
  inst.u0 = orthonormalize(seedDirs);
  inst.y = randomMat(g, n, d);
  inst.lin = linearize(inst.params, inst.x);
  return inst;
}

// The randomized instance family shared by the decomposition, block-split
// and recurrence checks. Same seeding in each check, so the instances are
// bitwise identical across the three.
constexpr int kInstanceCount = 200;

SplitMix64 instanceStream(const VerifyOptions& opts) { return SplitMix64(opts.seed * 101 + 3); }

Instance nthInstance(SplitMix64& g, const VerifyOptions& opts, int s) {
  return randomInstance(g, opts.seed + 2000 + static_cast<std::uint64_t>(s));
}

std::vector<OpId> allOps(int layers) {
  std::vector<OpId> ops;
  for (int l = 0; l < layers; ++l) {
    ops.push_back(OpId::attnNorm(l));
    ops.push_back(OpId::attn(l));
    ops.push_back(OpId::attnBlock(l));
    ops.push_back(OpId::mlpNorm(l));
    ops.push_back(OpId::mlp(l));
    ops.push_back(OpId::mlpBlock(l));
  }
  ops.push_back(OpId::finalNorm());
  return ops;
}

const Subspace& boundarySubspace(const SubspaceChain& chain, int layers, int t) {
  if (t == 2 * layers + 1) return chain.terminal;
  if (t % 2 == 0) return chain.atX[static_cast<std::size_t>(t / 2)];
  return chain.atMid[static_cast<std::size_t>(t / 2)];
}

struct PairExperiment {
  ModelParams params;
  PromptPair pair;
  AlignmentResult alignment;
  PathSpec path;
};

PairExperiment randomPairExperiment(SplitMix64& g, std::uint64_t modelSeed) {
  PairExperiment ex;
  const ModelConfig cfg = smallConfig(8, 2, 2, kindOf(g.next()), actOf(g.next()));
  ex.params = generateParams(cfg, modelSeed);

  const int hLen = 3 + static_cast<int>(g.below(3));
  for (int i = 0; i < hLen; ++i) {
    ex.pair.harmfulIds.push_back(static_cast<int>(g.below(cfg.vocabSize)));
  }
  const int pre = 1 + static_cast<int>(g.below(3));
  const int post = 1 + static_cast<int>(g.below(3));
  for (int i = 0; i < pre; ++i) {
    ex.pair.jailbreakIds.push_back(static_cast<int>(g.below(cfg.vocabSize)));
  }
  ex.pair.jailbreakIds.insert(ex.pair.jailbreakIds.end(), ex.pair.harmfulIds.begin(),
                              ex.pair.harmfulIds.end());
  for (int i = 0; i < post; ++i) {
    ex.pair.jailbreakIds.push_back(static_cast<int>(g.below(cfg.vocabSize)));
  }

  ex.alignment = alignTokens(ex.params.embedding, ex.pair.harmfulIds, ex.pair.jailbreakIds);
  ex.path = buildPath(ex.params, ex.alignment);
  return ex;
}

std::string describe(double worst, const std::string& extra = "") {
  std::ostringstream ss;
  ss << "worst=" << formatDouble(worst);
  if (!extra.empty()) ss << ", " << extra;
  return ss.str();
}

CheckResult checkAdjointIdentities(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"adjoint_identities", false, 0.0, 1e-10, "", 0.0};

  SplitMix64 g(opts.seed * 101 + 1);
  for (int variant = 0; variant < 2; ++variant) {
    const ModelConfig cfg =
        smallConfig(8, 2, 2, variant == 0 ? NormKind::RmsNorm : NormKind::LayerNorm,
                    variant == 0 ? Activation::Tanh : Activation::Gelu);
    const ModelParams params = generateParams(cfg, opts.seed + static_cast<std::uint64_t>(variant));
    const Mat x = randomMat(g, 5, 8);
    const PointLinearization lin = linearize(params, x);
    const std::vector<OpId> ops = allOps(cfg.nLayers);

    for (int p = 0; p < 100; ++p) {
      const Mat v = randomMat(g, 5, 8);
      const Mat w = randomMat(g, 5, 8);
      const double scale = frobNorm(v) * frobNorm(w);
      for (const OpId& op : ops) {
        const double lhs = frobInner(opJvp(lin, op, v), w);
        const double rhs = frobInner(v, opVjp(lin, op, w));
        res.worst = std::max(res.worst, std::abs(lhs - rhs) / scale);
      }
      const double lhs = frobInner(fullJvp(lin, v), w);
      const double rhs = frobInner(v, fullVjp(lin, w));
      res.worst = std::max(res.worst, std::abs(lhs - rhs) / scale);
    }
  }
  res.seconds = secondsSince(t0);
  res.pass = res.worst <= res.threshold && res.seconds < 5.0;
  res.detail = describe(res.worst, "2 models x 100 pairs x 13 ops + end-to-end");
  return res;
}

CheckResult checkFdAgreement(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"fd_agreement", false, 0.0, 1e-5, "", 0.0};

  SplitMix64 g(opts.seed * 101 + 2);
  for (int s = 0; s < 50; ++s) {
    const ModelConfig cfg = smallConfig(8, 2, 2, kindOf(static_cast<std::uint64_t>(s)),
                                        actOf(static_cast<std::uint64_t>(s)));
    const ModelParams params = generateParams(cfg, opts.seed + 1000 + static_cast<std::uint64_t>(s));
    const Mat x = randomMat(g, 5, 8);
    const Mat dx = randomMat(g, 5, 8);
    const Mat fd = fdJvpOracle(params, x, dx, opts.fdH);
    const Mat an = fullJvp(linearize(params, x), dx);
    res.worst =
        std::max(res.worst, relativeResidual(frobNorm(fd - an), frobNorm(fd), frobNorm(an)));
  }
  res.seconds = secondsSince(t0);
  res.pass = res.worst <= res.threshold && res.seconds < 10.0;
  res.detail = describe(res.worst, "50 seeds, both norms and activations, h=" + formatDouble(opts.fdH));
  return res;
}

CheckResult checkDecompositionExactness(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"decomposition_exactness", false, 0.0, 1e-9, "", 0.0};

  SplitMix64 g = instanceStream(opts);
  for (int s = 0; s < kInstanceCount; ++s) {
    const Instance inst = nthInstance(g, opts, s);
    const DecompositionReport rep = decomposeRed(inst.lin, inst.u0, inst.y);
    res.worst = std::max(res.worst, rep.identityResidualRel);
  }
  res.seconds = secondsSince(t0);
  res.pass = res.worst <= res.threshold && res.seconds < 20.0;
  res.detail = describe(res.worst, "200 randomized instances");
  return res;
}

CheckResult checkBlockSplitExactness(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"block_split_exactness", false, 0.0, 1e-10, "", 0.0};

  SplitMix64 g = instanceStream(opts);
  for (int s = 0; s < kInstanceCount; ++s) {
    const Instance inst = nthInstance(g, opts, s);
    const SubspaceChain chain = propagateSubspaces(inst.lin, inst.u0);
    const SourceLedger led = localSources(inst.lin, chain, inst.y);
    const std::vector<Mat> G = backwardDirections(inst.lin, inst.y);

    for (int l = 0; l < inst.params.config.nLayers; ++l) {
      const std::size_t ul = static_cast<std::size_t>(l);
      const LayerSources& ls = led.layers[ul];

      const Mat aMid = project(chain.atMid[ul], G[static_cast<std::size_t>(2 * l + 1)]);
      const Mat direct1 =
          projectComplement(chain.atX[ul], opVjp(inst.lin, OpId::attnBlock(l), aMid));
      const Mat sum1 = ls.bRes1Id + ls.bRes1Add + ls.bAttn + ls.bNorm1;
      res.worst = std::max(res.worst, relativeResidual(frobNorm(direct1 - sum1), frobNorm(direct1),
                                                       frobNorm(sum1)));

      const Mat aNext = project(chain.atX[ul + 1], G[static_cast<std::size_t>(2 * l + 2)]);
      const Mat direct2 =
          projectComplement(chain.atMid[ul], opVjp(inst.lin, OpId::mlpBlock(l), aNext));
      const Mat sum2 = ls.bRes2Id + ls.bRes2Add + ls.bMlp + ls.bNorm2;
      res.worst = std::max(res.worst, relativeResidual(frobNorm(direct2 - sum2), frobNorm(direct2),
                                                       frobNorm(sum2)));
    }
  }
  res.seconds = secondsSince(t0);
  res.pass = res.worst <= res.threshold;
  res.detail = describe(res.worst, "per-layer four-term sums, same instances as exactness");
  return res;
}

CheckResult checkLeakageRecurrence(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"leakage_recurrence", false, 0.0, 1e-10, "", 0.0};

  SplitMix64 g = instanceStream(opts);
  for (int s = 0; s < kInstanceCount; ++s) {
    const Instance inst = nthInstance(g, opts, s);
    const SubspaceChain chain = propagateSubspaces(inst.lin, inst.u0);
    const std::vector<double> resid = recurrenceResiduals(inst.lin, chain, inst.y);
    const std::vector<Mat> G = backwardDirections(inst.lin, inst.y);
    const int layers = inst.params.config.nLayers;
    for (int t = 0; t <= 2 * layers; ++t) {
      const Mat rt =
          projectComplement(boundarySubspace(chain, layers, t), G[static_cast<std::size_t>(t)]);
      res.worst =
          std::max(res.worst, resid[static_cast<std::size_t>(t)] / std::max(frobNorm(rt), 1.0));
    }
  }
  res.seconds = secondsSince(t0);
  res.pass = res.worst <= res.threshold;
  res.detail = describe(res.worst, "every block boundary, same instances as exactness");
  return res;
}

CheckResult checkNullEffect(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"null_effect", false, 0.0, 1e-10, "", 0.0};

  SplitMix64 g(opts.seed * 101 + 6);
  double worstOrth = 0.0;
  double worstC = 0.0;
  bool fdOk = true;

  for (int s = 0; s < 5; ++s) {
    Instance inst = randomInstance(g, opts.seed + 5000 + static_cast<std::uint64_t>(s));
    inst.y /= frobNorm(inst.y);
    const Mat pullback = fullVjp(inst.lin, inst.y);
    const Mat red = projectComplement(inst.u0, pullback);
    const double pn = frobNorm(pullback);

    for (const Mat& b : inst.u0.basis) {
      worstOrth = std::max(worstOrth, std::abs(frobInner(red, b)) / std::max(1.0, pn));
    }

    const Subspace redSpan =
        frobNorm(red) > 0 ? orthonormalize({red}) : Subspace::zero(red.rows(), red.cols());
    auto nullDirection = [&]() {
      return projectComplement(
          redSpan, projectComplement(inst.u0, randomMat(g, inst.x.rows(), inst.x.cols())));
    };
    for (int k = 0; k < 100; ++k) {
      const Mat dx = nullDirection();
      const double effect = std::abs(firstOrderEffect(inst.lin, inst.y, dx));
      res.worst = std::max(res.worst, effect / std::max(frobNorm(dx) * pn, 1e-300));
    }

    // signal response along a null direction is quadratic: the per-step slope
    // must shrink with h while the fitted curvature coefficient stays finite
    Mat dx = nullDirection();
    dx /= frobNorm(dx);
    const double base = std::abs(frobInner(forward(inst.params, inst.x).hidden, inst.y));
    const double hs[3] = {1e-2, 1e-3, 1e-4};
    double slope[3];
    for (int i = 0; i < 3; ++i) {
      const double shifted =
          std::abs(frobInner(forward(inst.params, inst.x + hs[i] * dx).hidden, inst.y));
      const double delta = std::abs(shifted - base);
      slope[i] = delta / hs[i];
      worstC = std::max(worstC, delta / (hs[i] * hs[i]));
    }
    const double floor = 1e-9 * std::max(1.0, base);
    if (!std::isfinite(worstC) || (slope[2] > 0.2 * slope[0] + floor)) fdOk = false;
  }

  const bool orthOk = worstOrth <= 1e-11;
  res.seconds = secondsSince(t0);
  res.pass = orthOk && res.worst <= res.threshold && fdOk;
  res.detail = describe(res.worst, "orth=" + formatDouble(worstOrth) + ", fd_c=" +
                                       formatDouble(worstC) +
                                       (fdOk ? ", quadratic" : ", fd-scaling FAILED"));
  return res;
}

CheckResult checkPaddingMirror(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"padding_mirror", false, 0.0, 1e-10, "", 0.0};

  SplitMix64 g(opts.seed * 101 + 7);
  int paddedNonzero = 0;
  int total = 0;
  double worstClean = 0.0;

  for (int s = 0; s < 50; ++s) {
    const PairExperiment ex =
        randomPairExperiment(g, opts.seed + 6000 + static_cast<std::uint64_t>(s));
    Mat yRef;
    try {
      yRef = referenceTargetSubspace(ex.params, ex.path.x0, ex.path.xStar);
    } catch (const DegenerateError&) {
      continue;  // a degenerate draw leaves total short of 50 and fails the check
    }
    ++total;

    // unpadded construction: escape vanishes by construction
    const Mat xClean = embed(ex.params, ex.pair.harmfulIds);
    Mat yClean = Mat::Zero(xClean.rows(), xClean.cols());
    yClean.row(xClean.rows() - 1) = yRef.row(yRef.rows() - 1);
    const PointLinearization linClean = linearize(ex.params, xClean);
    const Mat pullClean = fullVjp(linClean, yClean);
    const Subspace u0Clean = orthonormalize({pullClean});
    const double cleanRatio =
        frobNorm(redDirection(linClean, u0Clean, yClean)) / std::max(frobNorm(pullClean), 1e-300);
    worstClean = std::max(worstClean, cleanRatio);

    // padded construction: generically nonzero
    const Subspace uRef =
        referenceSemanticsSubspace(ex.params, ex.pair.harmfulIds, yRef, ex.alignment);
    const PointLinearization linPad = linearize(ex.params, ex.path.x0);
    const double padRatio = frobNorm(redDirection(linPad, uRef, yRef)) /
                            std::max(frobNorm(fullVjp(linPad, yRef)), 1e-300);
    if (padRatio > 1e-6) ++paddedNonzero;
  }

  res.worst = worstClean;
  res.seconds = secondsSince(t0);
  res.pass = worstClean <= 1e-10 && total == 50 && paddedNonzero >= 45;
  res.detail = describe(worstClean, "padded nonzero in " + std::to_string(paddedNonzero) + "/" +
                                        std::to_string(total));
  return res;
}

int longestCommonBlockLen(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  int best = 0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = (a[i - 1] == b[j - 1]) ? prev[j - 1] + 1 : 0;
      best = std::max(best, cur[j]);
    }
    std::swap(prev, cur);
  }
  return best;
}

CheckResult checkAlignmentProperties(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"alignment_properties", false, 0.0, 0.0, "", 0.0};

  SplitMix64 g(opts.seed * 101 + 8);
  ModelConfig cfg = smallConfig(8, 1, 2, NormKind::RmsNorm, Activation::Tanh);
  cfg.vocabSize = 10;
  const ModelParams params = generateParams(cfg, opts.seed + 7000);

  int failures = 0;
  auto checkPair = [&](const std::vector<int>& a, const std::vector<int>& b) {
    const AlignmentResult al = alignTokens(params.embedding, a, b);
    bool ok = al.alignedA.size() == al.alignedB.size() &&
              al.provenanceA.size() == al.alignedA.size() &&
              al.provenanceB.size() == al.alignedB.size();
    std::vector<int> strippedA, strippedB;
    int prevA = -1, prevB = -1;
    int run = 0, bestRun = 0;
    for (std::size_t i = 0; ok && i < al.alignedA.size(); ++i) {
      const bool gapA = al.alignedA[i] == kPlaceholderId;
      const bool gapB = al.alignedB[i] == kPlaceholderId;
      if (gapA && gapB) ok = false;  // never both
      if (gapA != (al.provenanceA[i] < 0)) ok = false;
      if (gapB != (al.provenanceB[i] < 0)) ok = false;
      if (!gapA) {
        if (al.provenanceA[i] <= prevA) ok = false;  // strictly increasing
        prevA = al.provenanceA[i];
        if (al.alignedA[i] != a[static_cast<std::size_t>(al.provenanceA[i])]) ok = false;
        strippedA.push_back(al.alignedA[i]);
      }
      if (!gapB) {
        if (al.provenanceB[i] <= prevB) ok = false;
        prevB = al.provenanceB[i];
        if (al.alignedB[i] != b[static_cast<std::size_t>(al.provenanceB[i])]) ok = false;
        strippedB.push_back(al.alignedB[i]);
      }
      run = (!gapA && !gapB && al.alignedA[i] == al.alignedB[i]) ? run + 1 : 0;
      bestRun = std::max(bestRun, run);
    }
    if (strippedA != a || strippedB != b) ok = false;
    if (bestRun < longestCommonBlockLen(a, b)) ok = false;
    if (a == b && (al.alignedA != a || al.alignedB != b)) ok = false;
    if (!ok) ++failures;
  };

  for (int s = 0; s < 1000; ++s) {
    const int la = 1 + static_cast<int>(g.below(64));
    const int lb = 1 + static_cast<int>(g.below(64));
    std::vector<int> a, b;
    for (int i = 0; i < la; ++i) a.push_back(static_cast<int>(g.below(cfg.vocabSize)));
    if (g.below(8) == 0) {
      b = a;  // exercise the identical-pair branch
    } else {
      for (int i = 0; i < lb; ++i) b.push_back(static_cast<int>(g.below(cfg.vocabSize)));
    }
    checkPair(a, b);
  }

  // worked examples over a constructed embedding table
  ModelParams worked = params;
  worked.embedding = Mat::Zero(cfg.vocabSize, cfg.dModel);
  worked.embedding(1, 0) = 1.0;
  worked.embedding(2, 0) = 0.9;
  worked.embedding(3, 0) = 0.1;
  worked.embedding(5, 1) = 1.0;
  worked.embedding(6, 2) = 1.0;
  worked.embedding(7, 3) = 1.0;
  worked.embedding(9, 4) = 1.0;

  const AlignmentResult ex1 = alignTokens(worked.embedding, {5, 6, 7}, {5, 9, 6, 7});
  if (ex1.alignedA != std::vector<int>{5, kPlaceholderId, 6, 7} ||
      ex1.alignedB != std::vector<int>{5, 9, 6, 7}) {
    ++failures;
  }
  const AlignmentResult ex2 = alignTokens(worked.embedding, {5, 6, 7}, {5, 6, 7});
  if (ex2.alignedA != std::vector<int>{5, 6, 7} || ex2.alignedB != std::vector<int>{5, 6, 7}) {
    ++failures;
  }
  const AlignmentResult ex3 = alignTokens(worked.embedding, {1}, {2, 3});
  if (ex3.alignedA != std::vector<int>{1, kPlaceholderId} ||
      ex3.alignedB != std::vector<int>{2, 3}) {
    ++failures;
  }

  res.worst = static_cast<double>(failures);
  res.seconds = secondsSince(t0);
  res.pass = failures == 0;
  res.detail = describe(res.worst, "1000 random pairs + 3 worked examples, failures=" +
                                       std::to_string(failures));
  return res;
}

CheckResult checkQuantileExtraction(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"quantile_extraction", false, 0.0, 0.0, "", 0.0};

  // linear ramp: quarter points within one grid step
  std::vector<GridPoint> ramp;
  for (int i = 0; i <= 100; ++i) {
    const double v = static_cast<double>(i) / 100.0;
    ramp.push_back(GridPoint{v, v, v});
  }
  const ExtractionResult ex = extractIntermediatePoints(ramp, 32, 1e-3);
  const double step = 0.01 + 1e-9;
  res.threshold = step;
  res.worst =
      std::max({std::abs(ex.eta2 - 0.25), std::abs(ex.eta3 - 0.50), std::abs(ex.eta4 - 0.75)});
  bool ok = res.worst <= step && ex.eta1 == 0.0 && ex.eta5 == 1.0 && !ex.degenerate;

  // ordering invariant on random smooth signals
  SplitMix64 g(opts.seed * 101 + 9);
  int orderFailures = 0;
  for (int s = 0; s < 200; ++s) {
    double a[4], ph[4];
    for (int k = 0; k < 4; ++k) {
      a[k] = g.symmetric();
      ph[k] = g.uniform01() * 6.283185307179586;
    }
    const double slope = g.symmetric();
    std::vector<GridPoint> grid;
    for (int i = 0; i <= 100; ++i) {
      const double eta = static_cast<double>(i) / 100.0;
      double v = slope * eta;
      for (int k = 0; k < 4; ++k) v += a[k] * std::sin(3.141592653589793 * (k + 1) * eta + ph[k]);
      grid.push_back(GridPoint{eta, std::abs(v), v});
    }
    const ExtractionResult e = extractIntermediatePoints(grid, 32, 1e-3);
    if (!(e.eta1 <= e.eta2 && e.eta2 <= e.eta3 && e.eta3 <= e.eta4 && e.eta4 <= e.eta5)) {
      ++orderFailures;
    }
  }
  ok = ok && orderFailures == 0;

  res.seconds = secondsSince(t0);
  res.pass = ok;
  res.detail = describe(res.worst, "ramp quarter points + ordering on 200 smooth signals, failures=" +
                                       std::to_string(orderFailures));
  return res;
}

CheckResult checkRhoIdentities(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"rho_identities", false, 0.0, 1e-10, "", 0.0};

  SplitMix64 g(opts.seed * 101 + 10);
  const double etas[5] = {0.0, 0.25, 0.4, 0.75, 1.0};
  int definedOne = 0, definedZero = 0;
  for (int s = 0; s < 25; ++s) {
    const ModelConfig cfg = smallConfig(8, 2, 2, kindOf(static_cast<std::uint64_t>(s)),
                                        actOf(static_cast<std::uint64_t>(s)));
    const ModelParams params =
        generateParams(cfg, opts.seed + 8000 + static_cast<std::uint64_t>(s));
    const int n = 5;
    const Mat x0 = randomMat(g, n, 8);
    const Subspace u = orthonormalize({randomMat(g, n, 8)});
    Mat yRef = randomMat(g, n, 8);
    yRef /= frobNorm(yRef);

    PathSpec orth;
    orth.x0 = x0;
    orth.xStar = x0 + projectComplement(u, randomMat(g, n, 8));
    orth.tangent = orth.xStar - orth.x0;

    PathSpec aligned;
    aligned.x0 = x0;
    aligned.xStar = x0 + project(u, randomMat(g, n, 8));
    aligned.tangent = aligned.xStar - aligned.x0;

    PathSpec gen;
    gen.x0 = x0;
    gen.xStar = x0 + randomMat(g, n, 8);
    gen.tangent = gen.xStar - gen.x0;

    for (double eta : etas) {
      // tangent outside the subspace: the ratio is one wherever defined
      const RhoResult r1 = rhoRatio(params, orth, u, yRef, eta);
      if (r1.defined) {
        ++definedOne;
        res.worst = std::max(res.worst, std::abs(r1.value - 1.0));
      }

      // tangent inside the subspace: the ratio is zero wherever defined
      const RhoResult r2 = rhoRatio(params, aligned, u, yRef, eta);
      if (r2.defined) {
        ++definedZero;
        res.worst = std::max(res.worst, std::abs(r2.value));
      }

      // split identity for a generic tangent
      const PointLinearization lin = linearize(params, gen.at(eta));
      const Mat pullback = fullVjp(lin, yRef);
      const Mat red = projectComplement(u, pullback);
      const double whole = frobInner(gen.tangent, pullback);
      const double split =
          frobInner(gen.tangent, red) + frobInner(gen.tangent, project(u, pullback));
      res.worst = std::max(
          res.worst, relativeResidual(std::abs(whole - split), std::abs(whole), std::abs(split)));
    }
  }
  res.seconds = secondsSince(t0);
  // the denominator guard may drop a few samples; most must remain
  res.pass = res.worst <= res.threshold && definedOne >= 100 && definedZero >= 100;
  res.detail = describe(res.worst, "25 models x 5 etas, defined " + std::to_string(definedOne) +
                                       "/" + std::to_string(definedZero) + " of 125/125");
  return res;
}

CheckResult checkDisplacementConvergence(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"displacement_convergence", false, 0.0, 1e-3, "", 0.0};

  SplitMix64 g(opts.seed * 101 + 11);
  bool convergenceOk = true;
  for (int s = 0; s < 3; ++s) {
    const ModelConfig cfg = smallConfig(8, 2, 2, kindOf(static_cast<std::uint64_t>(s)),
                                        actOf(static_cast<std::uint64_t>(s)));
    const ModelParams params =
        generateParams(cfg, opts.seed + 9000 + static_cast<std::uint64_t>(s));
    const int n = 5;
    PathSpec path;
    path.x0 = randomMat(g, n, 8);
    path.xStar = path.x0 + 0.5 * randomMat(g, n, 8);
    path.tangent = path.xStar - path.x0;
    Mat yRef = randomMat(g, n, 8);
    yRef /= frobNorm(yRef);

    const DisplacementCheck fine = cumulativeDisplacementCheck(params, path, yRef, 4096);
    const DisplacementCheck coarse = cumulativeDisplacementCheck(params, path, yRef, 512);
    const double scale = std::max(std::abs(fine.integral), std::abs(fine.endpoint));
    res.worst = std::max(res.worst, fine.residual / std::max(scale, 1e-300));

    // trapezoid error contracts like the square of the step; 8x more nodes
    // shrinks it 64x in theory, 16x demanded here, down to a noise floor
    const double floor = 1e-12 * std::max(1.0, scale);
    if (fine.residual > coarse.residual / 16.0 && fine.residual > floor) convergenceOk = false;
  }
  res.seconds = secondsSince(t0);
  res.pass = res.worst <= res.threshold && convergenceOk;
  res.detail = describe(res.worst, convergenceOk ? "contraction 512->4096 observed"
                                                 : "contraction 512->4096 FAILED");
  return res;
}

CheckResult checkReproducibility(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  CheckResult res{"reproducibility", false, 0.0, 0.0, "", 0.0};

  const ModelConfig cfg = smallConfig(8, 2, 2, NormKind::LayerNorm, Activation::Gelu);
  const std::string m1 = dumpJson(modelToJson(generateParams(cfg, opts.seed)));
  const std::string m2 = dumpJson(modelToJson(generateParams(cfg, opts.seed)));

  SplitMix64 g(opts.seed * 101 + 12);
  const PairExperiment ex = randomPairExperiment(g, opts.seed + 10000);
  RunConfig rc;
  rc.nQuad = 256;  // reproducibility, not accuracy, is under test here
  const std::string p1 = dumpJson(runPointReport(ex.params, ex.pair, rc));
  const std::string p2 = dumpJson(runPointReport(ex.params, ex.pair, rc));
  const PathReport q1 = runPathReport(ex.params, ex.pair, rc);
  const PathReport q2 = runPathReport(ex.params, ex.pair, rc);

  int mismatches = 0;
  if (m1 != m2) ++mismatches;
  if (p1 != p2) ++mismatches;
  if (dumpJson(q1.json) != dumpJson(q2.json) || q1.csv != q2.csv) ++mismatches;

  res.worst = static_cast<double>(mismatches);
  res.seconds = secondsSince(t0);
  res.pass = mismatches == 0;
  res.detail = describe(res.worst, "model, point report, path report each generated twice");
  return res;
}

}  // namespace

std::vector<CheckResult> runVerifySuite(const VerifyOptions& opts) {
  std::vector<CheckResult> out;
  out.push_back(checkAdjointIdentities(opts));
  out.push_back(checkFdAgreement(opts));
  out.push_back(checkDecompositionExactness(opts));
  out.push_back(checkBlockSplitExactness(opts));
  out.push_back(checkLeakageRecurrence(opts));
  out.push_back(checkNullEffect(opts));
  out.push_back(checkPaddingMirror(opts));
  out.push_back(checkAlignmentProperties(opts));
  out.push_back(checkQuantileExtraction(opts));
  out.push_back(checkRhoIdentities(opts));
  out.push_back(checkDisplacementConvergence(opts));
  out.push_back(checkReproducibility(opts));
  return out;
}

OrderedJson verifySummaryJson(const std::vector<CheckResult>& checks, double totalSeconds) {
  OrderedJson arr = OrderedJson::array();
  bool all = true;
  for (const CheckResult& c : checks) {
    OrderedJson e;
    e["name"] = c.name;
    e["pass"] = c.pass;
    e["worst"] = c.worst;
    e["threshold"] = c.threshold;
    e["detail"] = c.detail;
    e["seconds"] = c.seconds;
    arr.push_back(std::move(e));
    all = all && c.pass;
  }
  OrderedJson j;
  j["all_pass"] = all;
  j["total_seconds"] = totalSeconds;
  j["checks"] = std::move(arr);
  return j;
}

}  // namespace red
