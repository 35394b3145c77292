#include "red/engine.hpp"

#include <cmath>

#include "doctest.h"
#include "red/rng.hpp"

namespace {

red::Mat randomMat(red::SplitMix64& g, Eigen::Index r, Eigen::Index c) {
  red::Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g.symmetric();
  }
  return m;
}

red::ModelConfig smallConfig(int d, int layers, int heads) {
  red::ModelConfig cfg;
  cfg.dModel = d;
  cfg.nLayers = layers;
  cfg.nHeads = heads;
  cfg.dHead = d / heads;
  cfg.dMlp = 2 * d;
  cfg.vocabSize = 12;
  cfg.normKind = red::NormKind::RmsNorm;
  cfg.activation = red::Activation::Tanh;
  cfg.normEpsilon = 1e-5;
  cfg.causalMask = true;
  return cfg;
}

red::ModelParams zeroBodyParams(int d) {
  red::ModelConfig cfg = smallConfig(d, 1, 1);
  cfg.dHead = d;
  cfg.nHeads = 1;
  red::ModelParams p = red::generateParams(cfg, 3);
  p.layers[0].wo.setZero();
  p.layers[0].w2.setZero();
  p.layers[0].b2.setZero();
  return p;
}

red::Subspace randomSubspace(red::SplitMix64& g, Eigen::Index n, Eigen::Index d, int dim) {
  std::vector<red::Mat> dirs;
  for (int k = 0; k < dim; ++k) dirs.push_back(randomMat(g, n, d));
  return red::orthonormalize(dirs);
}

}  // namespace

TEST_CASE("full input space stays full-dimensional through invertible maps") {
  // rms norm with positive epsilon has an invertible row Jacobian, so every
  // tap keeps the whole 2-dimensional ambient space (n=1, d=2)
  red::ModelConfig cfg = smallConfig(2, 2, 1);
  cfg.dHead = 2;
  cfg.nHeads = 1;
  const red::ModelParams params = red::generateParams(cfg, 7);
  red::SplitMix64 g(83);
  const red::Mat x = randomMat(g, 1, 2);
  const red::PointLinearization lin = red::linearize(params, x);

  std::vector<red::Mat> basis;
  basis.push_back((red::Mat(1, 2) << 1.0, 0.0).finished());
  basis.push_back((red::Mat(1, 2) << 0.0, 1.0).finished());
  const red::Subspace u0{1, 2, basis};
  const red::SubspaceChain chain = red::propagateSubspaces(lin, u0);
  for (const auto& [tap, dim] : chain.rankRecord) {
    INFO(tap);
    CHECK(dim == 2);
  }
}

TEST_CASE("zero-body model collapses branch taps and fixes the residual taps") {
  const red::ModelParams params = zeroBodyParams(4);
  red::SplitMix64 g(89);
  const red::Mat x = randomMat(g, 3, 4);
  const red::PointLinearization lin = red::linearize(params, x);
  const red::Subspace u0 = randomSubspace(g, 3, 4, 1);

  const red::SubspaceChain chain = red::propagateSubspaces(lin, u0);
  CHECK(chain.atAttnOut[0].dim() == 0);
  CHECK(chain.atMlpOut[0].dim() == 0);
  CHECK(chain.atMid[0].dim() == 1);
  // the block jvp is the identity here, so the mid subspace is u0 itself
  CHECK(red::frobNorm(red::projectComplement(chain.atMid[0], u0.basis[0])) < 1e-12);
  CHECK(red::frobNorm(red::projectComplement(chain.atX[1], u0.basis[0])) < 1e-12);
}

TEST_CASE("tap dimensions never grow and match an independent image computation") {
  red::SplitMix64 g(97);
  const red::ModelParams params = red::generateParams(smallConfig(8, 2, 2), 13);
  const red::Mat x = randomMat(g, 4, 8);
  const red::PointLinearization lin = red::linearize(params, x);
  const red::Subspace u0 = randomSubspace(g, 4, 8, 2);
  const red::SubspaceChain chain = red::propagateSubspaces(lin, u0);

  for (int l = 0; l < 2; ++l) {
    const std::size_t ul = static_cast<std::size_t>(l);
    CHECK(chain.atAttnIn[ul].dim() <= chain.atX[ul].dim());
    CHECK(chain.atAttnOut[ul].dim() <= chain.atAttnIn[ul].dim());
    CHECK(chain.atMid[ul].dim() <= chain.atX[ul].dim());
    CHECK(chain.atMlpIn[ul].dim() <= chain.atMid[ul].dim());
    CHECK(chain.atMlpOut[ul].dim() <= chain.atMlpIn[ul].dim());
    CHECK(chain.atX[ul + 1].dim() <= chain.atMid[ul].dim());
  }
  CHECK(chain.terminal.dim() <= chain.atX.back().dim());

  // independent recomputation of one tap image
  std::vector<red::Mat> images;
  for (const red::Mat& b : chain.atX[0].basis) {
    images.push_back(red::opJvp(lin, red::OpId::attnNorm(0), b));
  }
  const red::Subspace again = red::orthonormalize(images);
  REQUIRE(again.dim() == chain.atAttnIn[0].dim());
  for (const red::Mat& b : again.basis) {
    CHECK(red::frobNorm(red::projectComplement(chain.atAttnIn[0], b)) < 1e-10);
  }
}

TEST_CASE("backward directions chain the block adjoints") {
  red::SplitMix64 g(101);
  const red::ModelParams params = red::generateParams(smallConfig(8, 2, 2), 17);
  const red::Mat x = randomMat(g, 4, 8);
  const red::PointLinearization lin = red::linearize(params, x);
  const red::Mat y = randomMat(g, 4, 8);

  const std::vector<red::Mat> dirs = red::backwardDirections(lin, y);
  REQUIRE(dirs.size() == 6);
  CHECK(red::frobNorm(dirs[5] - y) == 0.0);
  CHECK(red::frobNorm(dirs[0] - red::fullVjp(lin, y)) < 1e-12);
  // one step recomputed by hand
  CHECK(red::frobNorm(dirs[4] - red::opVjp(lin, red::OpId::finalNorm(), y)) == 0.0);
  CHECK(red::frobNorm(dirs[3] - red::opVjp(lin, red::OpId::mlpBlock(1), dirs[4])) == 0.0);

  const std::vector<red::Mat> zeros = red::backwardDirections(lin, red::Mat::Zero(4, 8));
  for (const red::Mat& z : zeros) CHECK(red::frobNorm(z) == 0.0);
}

TEST_CASE("zero-body model produces no body or reentry sources") {
  const red::ModelParams params = zeroBodyParams(4);
  red::SplitMix64 g(103);
  const red::Mat x = randomMat(g, 3, 4);
  const red::PointLinearization lin = red::linearize(params, x);
  const red::Subspace u0 = randomSubspace(g, 3, 4, 1);
  const red::SubspaceChain chain = red::propagateSubspaces(lin, u0);
  const red::Mat y = randomMat(g, 3, 4);

  const red::SourceLedger led = red::localSources(lin, chain, y);
  CHECK(red::frobNorm(led.layers[0].bAttn) == 0.0);
  CHECK(red::frobNorm(led.layers[0].bMlp) == 0.0);
  CHECK(red::frobNorm(led.layers[0].bRes1Add) == 0.0);
  CHECK(red::frobNorm(led.layers[0].bRes2Add) == 0.0);
  // identity leakage vanishes too: the mid subspace equals the input subspace
  CHECK(red::frobNorm(led.layers[0].bRes1Id) < 1e-12);
  CHECK(red::frobNorm(led.layers[0].bRes2Id) < 1e-12);
}

TEST_CASE("target inside the terminal subspace has no terminal source") {
  red::SplitMix64 g(107);
  const red::ModelParams params = red::generateParams(smallConfig(8, 2, 2), 19);
  const red::Mat x = randomMat(g, 4, 8);
  const red::PointLinearization lin = red::linearize(params, x);
  const red::Subspace u0 = randomSubspace(g, 4, 8, 3);
  const red::SubspaceChain chain = red::propagateSubspaces(lin, u0);
  REQUIRE(chain.terminal.dim() >= 1);

  red::Mat y = red::Mat::Zero(4, 8);
  for (const red::Mat& b : chain.terminal.basis) y += g.symmetric() * b;
  const red::SourceLedger led = red::localSources(lin, chain, y);
  CHECK(red::frobNorm(led.terminal) < 1e-12 * std::max(1.0, red::frobNorm(y)));

  const auto consistency = red::consistencyResiduals(lin, chain, y);
  CHECK(consistency.at("terminal") < 1e-12 * std::max(1.0, red::frobNorm(y)));
}

TEST_CASE("local sources satisfy the membership invariants and the block split") {
  red::SplitMix64 g(109);
  const red::ModelParams params = red::generateParams(smallConfig(8, 2, 2), 23);
  const red::Mat x = randomMat(g, 5, 8);
  const red::PointLinearization lin = red::linearize(params, x);
  const red::Subspace u0 = randomSubspace(g, 5, 8, 2);
  const red::SubspaceChain chain = red::propagateSubspaces(lin, u0);
  const red::Mat y = randomMat(g, 5, 8);
  const red::SourceLedger led = red::localSources(lin, chain, y);
  const std::vector<red::Mat> dirs = red::backwardDirections(lin, y);

  for (int l = 0; l < 2; ++l) {
    const std::size_t ul = static_cast<std::size_t>(l);
    const red::LayerSources& s = led.layers[ul];
    // identity-edge sources live in the complement at their boundary
    CHECK(red::frobNorm(red::project(chain.atX[ul], s.bRes1Id)) < 1e-10);
    CHECK(red::frobNorm(red::project(chain.atX[ul], s.bNorm1)) < 1e-10);
    CHECK(red::frobNorm(red::project(chain.atMid[ul], s.bRes2Id)) < 1e-10);
    CHECK(red::frobNorm(red::project(chain.atMid[ul], s.bNorm2)) < 1e-10);

    // four-term sums against the directly computed block source
    const red::Mat aMid = red::project(chain.atMid[ul], dirs[static_cast<std::size_t>(2 * l + 1)]);
    const red::Mat direct1 = red::projectComplement(
        chain.atX[ul], red::opVjp(lin, red::OpId::attnBlock(l), aMid));
    const red::Mat sum1 = s.bRes1Id + s.bRes1Add + s.bAttn + s.bNorm1;
    CHECK(red::frobNorm(direct1 - sum1) < 1e-10 * std::max(1.0, red::frobNorm(direct1)));

    const red::Mat aNext = red::project(chain.atX[ul + 1], dirs[static_cast<std::size_t>(2 * l + 2)]);
    const red::Mat direct2 = red::projectComplement(
        chain.atMid[ul], red::opVjp(lin, red::OpId::mlpBlock(l), aNext));
    const red::Mat sum2 = s.bRes2Id + s.bRes2Add + s.bMlp + s.bNorm2;
    CHECK(red::frobNorm(direct2 - sum2) < 1e-10 * std::max(1.0, red::frobNorm(direct2)));
  }
  CHECK(red::frobNorm(red::project(chain.terminal, led.terminal)) < 1e-10);
}

TEST_CASE("transport at layer zero is the empty composition") {
  red::SplitMix64 g(113);
  const red::ModelParams params = red::generateParams(smallConfig(8, 1, 2), 29);
  const red::Mat x = randomMat(g, 4, 8);
  const red::PointLinearization lin = red::linearize(params, x);
  const red::Subspace u0 = randomSubspace(g, 4, 8, 2);
  const red::SubspaceChain chain = red::propagateSubspaces(lin, u0);
  const red::Mat y = randomMat(g, 4, 8);

  const red::SourceLedger led = red::transportToInput(lin, red::localSources(lin, chain, y));
  const red::LayerSources& s = led.layers[0];
  CHECK(red::frobNorm(s.sRes1Id - s.bRes1Id) == 0.0);
  CHECK(red::frobNorm(s.sAttn - s.bAttn) == 0.0);
  CHECK(red::frobNorm(s.sNorm1 - s.bNorm1) == 0.0);
  // mid-boundary sources pass through their own attention block only
  CHECK(red::frobNorm(s.sMlp - red::opVjp(lin, red::OpId::attnBlock(0), s.bMlp)) == 0.0);

  // transporting zero gives zero
  red::SourceLedger zeroLed = red::localSources(lin, chain, red::Mat::Zero(4, 8));
  zeroLed = red::transportToInput(lin, std::move(zeroLed));
  CHECK(red::frobNorm(zeroLed.layers[0].sRes1Id) == 0.0);
  CHECK(red::frobNorm(zeroLed.sTerminal) == 0.0);
}

TEST_CASE("red direction is the complement part of the pullback") {
  red::SplitMix64 g(127);
  const red::ModelParams params = red::generateParams(smallConfig(8, 2, 2), 31);
  const red::Mat x = randomMat(g, 4, 8);
  const red::PointLinearization lin = red::linearize(params, x);
  const red::Mat y = randomMat(g, 4, 8);
  const red::Mat pullback = red::fullVjp(lin, y);

  // the pullback's own span kills it
  const red::Subspace span = red::orthonormalize({pullback});
  CHECK(red::frobNorm(red::redDirection(lin, span, y)) <
        1e-12 * std::max(1.0, red::frobNorm(pullback)));

  // the zero subspace keeps it whole
  const red::Subspace zero = red::Subspace::zero(4, 8);
  CHECK(red::frobNorm(red::redDirection(lin, zero, y) - pullback) == 0.0);

  // orthogonality to every basis element
  const red::Subspace u0 = randomSubspace(g, 4, 8, 3);
  const red::Mat r = red::redDirection(lin, u0, y);
  for (const red::Mat& b : u0.basis) {
    CHECK(std::abs(red::frobInner(r, b)) < 1e-11 * std::max(1.0, red::frobNorm(pullback)));
  }
}

TEST_CASE("decomposition identity holds on random instances") {
  red::SplitMix64 g(131);
  for (int rep = 0; rep < 8; ++rep) {
    const int layers = 1 + static_cast<int>(g.below(3));
    const red::ModelParams params =
        red::generateParams(smallConfig(8, layers, 2), 37 + static_cast<std::uint64_t>(rep));
    const int n = 2 + static_cast<int>(g.below(4));
    const red::Mat x = randomMat(g, n, 8);
    const red::PointLinearization lin = red::linearize(params, x);
    const red::Subspace u0 = randomSubspace(g, n, 8, 1 + static_cast<int>(g.below(3)));
    const red::Mat y = randomMat(g, n, 8);

    const red::DecompositionReport rep2 = red::decomposeRed(lin, u0, y);
    CHECK(rep2.identityResidualRel <= 1e-9);

    // signed projections sum to the probe projection of the escape direction
    double sum = 0.0;
    for (const auto& [name, value] : rep2.sourceProjections) sum += value;
    const red::Mat probe = rep2.probe == red::ProbeKind::UnitRDirect
                               ? red::Mat(rep2.rDirect / red::frobNorm(rep2.rDirect))
                               : [&] {
                                   red::Mat e = red::Mat::Zero(n, 8);
                                   e(0, 0) = 1.0;
                                   return e;
                                 }();
    CHECK(std::abs(sum - red::frobInner(rep2.rDirect, probe)) <=
          1e-9 * std::max(1.0, red::frobNorm(rep2.rDirect)));

    // recurrence at every block
    const red::SubspaceChain chain = red::propagateSubspaces(lin, u0);
    for (double resid : red::recurrenceResiduals(lin, chain, y)) {
      CHECK(resid <= 1e-10 * std::max(1.0, red::frobNorm(y)));
    }
  }
}

TEST_CASE("pullback-span seed gives zero escape and the coordinate probe") {
  red::SplitMix64 g(137);
  const red::ModelParams params = red::generateParams(smallConfig(8, 2, 2), 41);
  const red::Mat x = randomMat(g, 4, 8);
  const red::PointLinearization lin = red::linearize(params, x);
  red::Mat y = randomMat(g, 4, 8);
  y /= red::frobNorm(y);

  const red::Subspace u0 = red::orthonormalize({red::fullVjp(lin, y)});
  const red::DecompositionReport rep = red::decomposeRed(lin, u0, y);
  CHECK(red::frobNorm(rep.rDirect) <= 1e-10 * rep.pullbackNorm);
  CHECK(rep.probe == red::ProbeKind::CoordinateE1);

  double sum = 0.0;
  for (const auto& [name, value] : rep.sourceProjections) sum += value;
  CHECK(std::abs(sum) <= 1e-9 * std::max(1.0, rep.pullbackNorm));
}

TEST_CASE("zero seed subspace routes everything through the terminal source") {
  const red::ModelParams params = zeroBodyParams(4);
  red::SplitMix64 g(139);
  const red::Mat x = randomMat(g, 3, 4);
  const red::PointLinearization lin = red::linearize(params, x);
  const red::Mat y = randomMat(g, 3, 4);

  const red::DecompositionReport rep = red::decomposeRed(lin, red::Subspace::zero(3, 4), y);
  CHECK(rep.familyNorms.at("attn") == 0.0);
  CHECK(rep.familyNorms.at("mlp") == 0.0);
  CHECK(red::frobNorm(rep.sNorm + rep.sRes + rep.sTerminal - rep.rDirect) <
        1e-12 * std::max(1.0, red::frobNorm(rep.rDirect)));
  CHECK(red::frobNorm(rep.sTerminal - rep.rDirect) == 0.0);
}

TEST_CASE("first-order effect is the adjoint pairing") {
  red::SplitMix64 g(149);
  const red::ModelParams params = red::generateParams(smallConfig(8, 2, 2), 43);
  const red::Mat x = randomMat(g, 4, 8);
  const red::PointLinearization lin = red::linearize(params, x);
  const red::Mat y = randomMat(g, 4, 8);
  const red::Mat dx = randomMat(g, 4, 8);

  const double viaJvp = red::firstOrderEffect(lin, y, dx);
  const double viaVjp = red::frobInner(dx, red::fullVjp(lin, y)) / red::frobNorm(y);
  CHECK(viaJvp == doctest::Approx(viaVjp).epsilon(1e-11));

  CHECK(red::firstOrderEffect(lin, y, red::Mat::Zero(4, 8)) == 0.0);
  CHECK_THROWS_AS(red::firstOrderEffect(lin, red::Mat::Zero(4, 8), dx), red::InputError);

  // double-projected directions carry no first-order signal
  const red::Subspace u0 = randomSubspace(g, 4, 8, 2);
  const red::Mat r = red::redDirection(lin, u0, y);
  const red::Subspace rSpan = red::orthonormalize({r});
  for (int k = 0; k < 20; ++k) {
    const red::Mat nullDir =
        red::projectComplement(rSpan, red::projectComplement(u0, randomMat(g, 4, 8)));
    const double effect = std::abs(red::firstOrderEffect(lin, y, nullDir));
    CHECK(effect <= 1e-10 * red::frobNorm(nullDir) * red::frobNorm(red::fullVjp(lin, y)) /
                        red::frobNorm(y));
  }
}

TEST_CASE("consistency residuals recompute as their defining projections") {
  red::SplitMix64 g(151);
  const red::ModelParams params = red::generateParams(smallConfig(8, 1, 2), 47);
  const red::Mat x = randomMat(g, 4, 8);
  const red::PointLinearization lin = red::linearize(params, x);
  const red::Subspace u0 = randomSubspace(g, 4, 8, 2);
  const red::SubspaceChain chain = red::propagateSubspaces(lin, u0);
  const red::Mat y = randomMat(g, 4, 8);

  const auto out = red::consistencyResiduals(lin, chain, y);
  for (const auto& [key, value] : out) CHECK(value >= 0.0);

  const std::vector<red::Mat> dirs = red::backwardDirections(lin, y);
  const red::Mat gAttnIn = red::opVjp(lin, red::OpId::attn(0), dirs[1]);
  const red::Mat l1 =
      red::opVjp(lin, red::OpId::attnNorm(0), red::project(chain.atAttnIn[0], gAttnIn));
  CHECK(out.at("norm.attn.0") ==
        doctest::Approx(red::frobNorm(red::projectComplement(chain.atX[0], l1))).epsilon(1e-12));

  const red::Mat aMid = red::project(chain.atMid[0], dirs[1]);
  CHECK(out.at("res_id.attn.0") ==
        doctest::Approx(red::frobNorm(red::projectComplement(chain.atX[0], aMid))).epsilon(1e-12));
  CHECK(out.at("terminal") ==
        doctest::Approx(red::frobNorm(red::projectComplement(chain.terminal, y))).epsilon(1e-12));
}
