#include "red/model.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "red/rng.hpp"

namespace {

using Grid = std::vector<std::vector<double>>;

red::Mat randomMat(red::SplitMix64& g, Eigen::Index r, Eigen::Index c) {
  red::Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g.symmetric();
  }
  return m;
}

Grid toGrid(const red::Mat& m) {
  Grid g(static_cast<std::size_t>(m.rows()),
         std::vector<double>(static_cast<std::size_t>(m.cols()), 0.0));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
    }
  }
  return g;
}

Grid toGrid(const red::Vec& v) {
  Grid g(1, std::vector<double>(static_cast<std::size_t>(v.size()), 0.0));
  for (Eigen::Index i = 0; i < v.size(); ++i) g[0][static_cast<std::size_t>(i)] = v(i);
  return g;
}

Grid matmul(const Grid& a, const Grid& b) {
  Grid out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    }
  }
  return out;
}

Grid addRowVec(Grid m, const Grid& row) {
  for (auto& r : m) {
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[0][j];
  }
  return m;
}

Grid add(Grid a, const Grid& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  }
  return a;
}

Grid naiveNorm(red::NormKind kind, const Grid& z, const red::Vec& gain, const red::Vec& bias,
               double eps) {
  const std::size_t d = z[0].size();
  Grid out(z.size(), std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < z.size(); ++i) {
    double mean = 0.0;
    if (kind == red::NormKind::LayerNorm) {
      for (double v : z[i]) mean += v;
      mean /= static_cast<double>(d);
    }
    double ss = 0.0;
    for (double v : z[i]) ss += (v - mean) * (v - mean);
    const double stat = std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) {
      out[i][j] = (z[i][j] - mean) * gain(static_cast<Eigen::Index>(j)) / stat;
      if (bias.size() != 0) out[i][j] += bias(static_cast<Eigen::Index>(j));
    }
  }
  return out;
}

// plain-loop reimplementation of the whole forward map, kept deliberately
// independent of the library's matrix code
Grid naiveForward(const red::ModelParams& params, const Grid& x0, Grid* logitsOut) {
  const red::ModelConfig& cfg = params.config;
  const std::size_t n = x0.size();
  const std::size_t dh = static_cast<std::size_t>(cfg.dHead);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.dHead));

  Grid x = x0;
  for (int l = 0; l < cfg.nLayers; ++l) {
    const red::LayerParams& lp = params.layers[static_cast<std::size_t>(l)];
    const Grid p = naiveNorm(cfg.normKind, x, lp.attnNormGain, lp.attnNormBias, cfg.normEpsilon);
    const Grid q = matmul(p, toGrid(lp.wq));
    const Grid k = matmul(p, toGrid(lp.wk));
    const Grid v = matmul(p, toGrid(lp.wv));

    Grid ctx(n, std::vector<double>(static_cast<std::size_t>(cfg.dModel), 0.0));
    for (int h = 0; h < cfg.nHeads; ++h) {
      const std::size_t off = static_cast<std::size_t>(h) * dh;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t last = cfg.causalMask ? i : n - 1;
        std::vector<double> scores(last + 1, 0.0);
        for (std::size_t j = 0; j <= last; ++j) {
          for (std::size_t a = 0; a < dh; ++a) scores[j] += q[i][off + a] * k[j][off + a];
          scores[j] *= scale;
        }
        double m = scores[0];
        for (double s : scores) m = std::max(m, s);
        double denom = 0.0;
        for (double s : scores) denom += std::exp(s - m);
        for (std::size_t j = 0; j <= last; ++j) {
          const double prob = std::exp(scores[j] - m) / denom;
          for (std::size_t a = 0; a < dh; ++a) ctx[i][off + a] += prob * v[j][off + a];
        }
      }
    }
    const Grid o = matmul(ctx, toGrid(lp.wo));
    const Grid z = add(x, o);

    const Grid qn = naiveNorm(cfg.normKind, z, lp.mlpNormGain, lp.mlpNormBias, cfg.normEpsilon);
    Grid pre = addRowVec(matmul(qn, toGrid(lp.w1)), toGrid(lp.b1));
    for (auto& row : pre) {
      for (double& e : row) e = red::actValue(cfg.activation, e);
    }
    const Grid m = addRowVec(matmul(pre, toGrid(lp.w2)), toGrid(lp.b2));
    x = add(z, m);
  }
  const Grid hidden =
      naiveNorm(cfg.normKind, x, params.finalNormGain, params.finalNormBias, cfg.normEpsilon);
  if (logitsOut) {
    Grid lastRow(1, hidden.back());
    Grid wOutT(static_cast<std::size_t>(params.wOut.cols()),
               std::vector<double>(static_cast<std::size_t>(params.wOut.rows()), 0.0));
    for (Eigen::Index i = 0; i < params.wOut.rows(); ++i) {
      for (Eigen::Index j = 0; j < params.wOut.cols(); ++j) {
        wOutT[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = params.wOut(i, j);
      }
    }
    *logitsOut = addRowVec(matmul(lastRow, wOutT), toGrid(params.bOut));
  }
  return hidden;
}

double maxAbsDiff(const red::Mat& m, const Grid& g) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      worst = std::max(worst,
                       std::abs(m(i, j) - g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
    }
  }
  return worst;
}

red::ModelConfig testConfig(red::NormKind kind, red::Activation act) {
  red::ModelConfig cfg;
  cfg.dModel = 8;
  cfg.nLayers = 2;
  cfg.nHeads = 2;
  cfg.dHead = 4;
  cfg.dMlp = 16;
  cfg.vocabSize = 12;
  cfg.normKind = kind;
  cfg.activation = act;
  cfg.normEpsilon = 1e-5;
  cfg.causalMask = true;
  return cfg;
}

// all-zero branch outputs: the residual stream passes through unchanged
red::ModelParams zeroBodyParams(int d, int n) {
  red::ModelConfig cfg;
  cfg.dModel = d;
  cfg.nLayers = 1;
  cfg.nHeads = 1;
  cfg.dHead = d;
  cfg.dMlp = d;
  cfg.vocabSize = 4;
  cfg.normKind = red::NormKind::RmsNorm;
  cfg.normEpsilon = 1e-300;  // vanishes against any O(1) mean square
  red::ModelParams p = red::generateParams(cfg, 3);
  p.layers[0].wo.setZero();
  p.layers[0].w2.setZero();
  p.layers[0].b2.setZero();
  for (auto& lp : p.layers) {
    lp.attnNormGain.setOnes();
    lp.mlpNormGain.setOnes();
  }
  p.finalNormGain.setOnes();
  (void)n;
  return p;
}

}  // namespace

TEST_CASE("embed maps placeholders to hard-zero rows") {
  const red::ModelConfig cfg = testConfig(red::NormKind::RmsNorm, red::Activation::Tanh);
  red::ModelParams params = red::generateParams(cfg, 5);

  const red::Mat x = red::embed(params, {3, red::kPlaceholderId, 7});
  CHECK(x.rows() == 3);
  CHECK((x.row(0) - params.embedding.row(3)).norm() == 0.0);
  CHECK(x.row(1).norm() == 0.0);
  CHECK((x.row(2) - params.embedding.row(7)).norm() == 0.0);

  // positions only touch real-token rows
  red::SplitMix64 g(21);
  params.positionTable = randomMat(g, 4, cfg.dModel);
  const red::Mat xp = red::embed(params, {3, red::kPlaceholderId, 7});
  const red::RowVec expected = params.embedding.row(3) + params.positionTable.row(0);
  CHECK((xp.row(0) - expected).norm() == 0.0);
  CHECK(xp.row(1).norm() == 0.0);

  CHECK_THROWS_AS(red::embed(params, {cfg.vocabSize}), red::InputError);
  CHECK_THROWS_AS(red::embed(params, {-2}), red::InputError);
  CHECK_THROWS_AS(red::embed(params, {}), red::InputError);
}

TEST_CASE("forward matches a plain-loop reimplementation") {
  red::SplitMix64 g(23);
  const red::NormKind kinds[2] = {red::NormKind::RmsNorm, red::NormKind::LayerNorm};
  const red::Activation acts[2] = {red::Activation::Tanh, red::Activation::Gelu};
  for (const auto kind : kinds) {
    for (const auto act : acts) {
      const red::ModelParams params = red::generateParams(testConfig(kind, act), 11);
      const red::Mat x = randomMat(g, 5, 8);
      const red::ForwardTrace tr = red::forward(params, x);
      Grid logits;
      const Grid hidden = naiveForward(params, toGrid(x), &logits);
      CHECK(maxAbsDiff(tr.hidden, hidden) < 1e-12);
      for (Eigen::Index t = 0; t < tr.logits.size(); ++t) {
        CHECK(std::abs(tr.logits(t) - logits[0][static_cast<std::size_t>(t)]) < 1e-12);
      }
    }
  }
}

TEST_CASE("residual stream adds are exact and probabilities are stochastic") {
  const red::ModelParams params =
      red::generateParams(testConfig(red::NormKind::LayerNorm, red::Activation::Gelu), 17);
  red::SplitMix64 g(29);
  const red::Mat x = randomMat(g, 6, 8);
  const red::ForwardTrace tr = red::forward(params, x);

  for (int l = 0; l < params.config.nLayers; ++l) {
    const std::size_t ul = static_cast<std::size_t>(l);
    CHECK(red::frobNorm(tr.mid[ul] - (tr.x[ul] + tr.attnOut[ul])) == 0.0);
    CHECK(red::frobNorm(tr.x[ul + 1] - (tr.mid[ul] + tr.mlpOut[ul])) == 0.0);
    for (const red::Mat& probs : tr.attnProbs[ul]) {
      for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-13));
        for (Eigen::Index j = i + 1; j < probs.cols(); ++j) {
          CHECK(probs(i, j) == 0.0);  // causally masked, exactly
        }
      }
    }
  }
}

TEST_CASE("zero-body model reduces to a row-wise rms rescale") {
  const red::ModelParams params = zeroBodyParams(4, 3);
  red::Mat x = red::Mat::Zero(3, 4);
  x(0, 0) = 1.0;
  x(1, 1) = 2.0;
  x(2, 0) = 1.0;
  x(2, 1) = 1.0;
  x(2, 2) = 1.0;
  x(2, 3) = 1.0;
  const red::ForwardTrace tr = red::forward(params, x);
  CHECK(red::frobNorm(tr.x.back() - x) == 0.0);  // branches are hard zero
  // rms of row 0 is 1/2, so the row is scaled by exactly 2
  CHECK(tr.hidden(0, 0) == 2.0);
  CHECK(tr.hidden(1, 1) == 2.0);  // rms of row 1 is 1
  CHECK(tr.hidden(2, 0) == 1.0);  // rms of row 2 is already 1
}

TEST_CASE("generated parameters are seed-deterministic and forward stays finite") {
  const red::ModelConfig cfg = testConfig(red::NormKind::RmsNorm, red::Activation::Gelu);
  const red::ModelParams a = red::generateParams(cfg, 2026);
  const red::ModelParams b = red::generateParams(cfg, 2026);
  const red::ModelParams c = red::generateParams(cfg, 2027);
  CHECK((a.embedding - b.embedding).norm() == 0.0);
  CHECK((a.layers[0].wq - b.layers[0].wq).norm() == 0.0);
  CHECK((a.layers[1].w2 - b.layers[1].w2).norm() == 0.0);
  CHECK((a.wOut - b.wOut).norm() == 0.0);
  CHECK((a.embedding - c.embedding).norm() != 0.0);

  red::SplitMix64 g(31);
  const red::Mat x = randomMat(g, 7, 8);
  const red::ForwardTrace tr = red::forward(a, x);
  CHECK(tr.hidden.allFinite());
  CHECK(tr.logits.allFinite());

  // two identical calls agree bitwise
  const red::ForwardTrace tr2 = red::forward(a, x);
  CHECK(red::frobNorm(tr.hidden - tr2.hidden) == 0.0);
}

TEST_CASE("norm row kernels at epsilon zero reproduce hand values") {
  red::RowVec z(2);
  z << 1.0, 0.0;
  const red::Vec gain = red::Vec::Ones(2);

  const double rmsStat = red::normRowStat(red::NormKind::RmsNorm, z, 0.0);
  CHECK(rmsStat == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  const red::RowVec rms = red::applyNormRow(red::NormKind::RmsNorm, z, gain, red::Vec(), 0.0);
  CHECK(rms(0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(rms(1) == 0.0);

  const double lnStat = red::normRowStat(red::NormKind::LayerNorm, z, 0.0);
  CHECK(lnStat == doctest::Approx(0.5).epsilon(1e-15));
  const red::RowVec ln = red::applyNormRow(red::NormKind::LayerNorm, z, gain, red::Vec(), 0.0);
  CHECK(ln(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ln(1) == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("activation values and derivatives") {
  CHECK(red::actValue(red::Activation::Tanh, 0.0) == 0.0);
  CHECK(red::actDerivValue(red::Activation::Tanh, 0.0) == 1.0);
  CHECK(red::actValue(red::Activation::Gelu, 0.0) == 0.0);
  CHECK(red::actDerivValue(red::Activation::Gelu, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  // derivative matches a centered difference
  for (double x : {-1.3, -0.2, 0.7, 2.1}) {
    for (auto act : {red::Activation::Tanh, red::Activation::Gelu}) {
      const double h = 1e-6;
      const double fd = (red::actValue(act, x + h) - red::actValue(act, x - h)) / (2.0 * h);
      CHECK(red::actDerivValue(act, x) == doctest::Approx(fd).epsilon(1e-8));
    }
  }
}

TEST_CASE("config validation rejects inconsistent shapes") {
  red::ModelConfig cfg = testConfig(red::NormKind::RmsNorm, red::Activation::Tanh);
  cfg.dHead = 3;  // 2 * 3 != 8
  CHECK_THROWS_AS(cfg.validate(), red::InputError);
  cfg = testConfig(red::NormKind::RmsNorm, red::Activation::Tanh);
  cfg.normEpsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), red::InputError);

  red::ModelParams p = red::generateParams(testConfig(red::NormKind::RmsNorm, red::Activation::Tanh), 1);
  p.layers[0].w1 = red::Mat::Zero(8, 15);
  CHECK_THROWS_AS(p.validate(), red::DimensionError);
}
