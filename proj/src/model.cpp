#include "red/model.hpp"

#include <cmath>
#include <string>

#include "red/rng.hpp"

namespace red {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143268;

void require(bool ok, const std::string& msg) {
  if (!ok) throw InputError(msg);
}

void requireShape(const Mat& m, Eigen::Index r, Eigen::Index c, const std::string& name) {
  if (m.rows() != r || m.cols() != c) {
    throw DimensionError(name + ": expected " + std::to_string(r) + "x" + std::to_string(c) +
                         ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

void requireVec(const Vec& v, Eigen::Index n, const std::string& name) {
  if (v.size() != n) {
    throw DimensionError(name + ": expected length " + std::to_string(n) + ", got " +
                         std::to_string(v.size()));
  }
}

Mat applyNorm(NormKind kind, const Mat& z, const Vec& gain, const Vec& bias, double eps) {
  Mat out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    out.row(i) = applyNormRow(kind, z.row(i), gain, bias, eps);
  }
  return out;
}

// Row-wise softmax with exact zeros at causally masked positions.
Mat softmaxRows(const Mat& scores, bool causal) {
  const Eigen::Index n = scores.rows();
  Mat probs = Mat::Zero(n, scores.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index last = causal ? i : scores.cols() - 1;
    double m = scores(i, 0);
    for (Eigen::Index j = 1; j <= last; ++j) m = std::max(m, scores(i, j));
    double denom = 0.0;
    for (Eigen::Index j = 0; j <= last; ++j) denom += std::exp(scores(i, j) - m);
    for (Eigen::Index j = 0; j <= last; ++j) probs(i, j) = std::exp(scores(i, j) - m) / denom;
  }
  return probs;
}

Mat drawMat(SplitMix64& g, Eigen::Index r, Eigen::Index c, double scale) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g.symmetric() * scale;
  }
  return m;
}

Vec drawVec(SplitMix64& g, Eigen::Index n, double scale) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = g.symmetric() * scale;
  return v;
}

Vec drawGain(SplitMix64& g, Eigen::Index n, double scale) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = 1.0 + g.symmetric() * scale;
  return v;
}

}  // namespace

void ModelConfig::validate() const {
  require(dModel > 0, "config: d_model must be positive");
  require(nLayers > 0, "config: n_layers must be positive");
  require(nHeads > 0, "config: n_heads must be positive");
  require(dHead > 0, "config: d_head must be positive");
  require(nHeads * dHead == dModel, "config: n_heads * d_head must equal d_model");
  require(dMlp > 0, "config: d_mlp must be positive");
  require(vocabSize > 0, "config: vocab_size must be positive");
  require(normEpsilon > 0.0, "config: norm_epsilon must be positive");
}

void ModelParams::validate() const {
  config.validate();
  const Eigen::Index d = config.dModel;
  requireShape(embedding, config.vocabSize, d, "embedding");
  require(static_cast<int>(layers.size()) == config.nLayers, "params: layer count mismatch");
  const bool ln = config.normKind == NormKind::LayerNorm;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerParams& lp = layers[l];
    const std::string tag = "layer " + std::to_string(l) + " ";
    requireVec(lp.attnNormGain, d, tag + "attn_norm_gain");
    requireVec(lp.attnNormBias, ln ? d : 0, tag + "attn_norm_bias");
    requireShape(lp.wq, d, d, tag + "w_q");
    requireShape(lp.wk, d, d, tag + "w_k");
    requireShape(lp.wv, d, d, tag + "w_v");
    requireShape(lp.wo, d, d, tag + "w_o");
    requireVec(lp.mlpNormGain, d, tag + "mlp_norm_gain");
    requireVec(lp.mlpNormBias, ln ? d : 0, tag + "mlp_norm_bias");
    requireShape(lp.w1, d, config.dMlp, tag + "w_1");
    requireVec(lp.b1, config.dMlp, tag + "b_1");
    requireShape(lp.w2, config.dMlp, d, tag + "w_2");
    requireVec(lp.b2, d, tag + "b_2");
  }
  requireVec(finalNormGain, d, "final_norm_gain");
  requireVec(finalNormBias, ln ? d : 0, "final_norm_bias");
  requireShape(wOut, config.vocabSize, d, "w_out");
  requireVec(bOut, config.vocabSize, "b_out");
  if (positionTable.size() != 0 && positionTable.cols() != d) {
    throw DimensionError("position_table: column count must equal d_model");
  }
}

double normRowStat(NormKind kind, const RowVec& z, double eps) {
  const double d = static_cast<double>(z.size());
  if (kind == NormKind::RmsNorm) {
    return std::sqrt(z.squaredNorm() / d + eps);
  }
  const RowVec centered = z.array() - z.mean();
  return std::sqrt(centered.squaredNorm() / d + eps);
}

RowVec applyNormRow(NormKind kind, const RowVec& z, const Vec& gain, const Vec& bias, double eps) {
  const double stat = normRowStat(kind, z, eps);
  if (kind == NormKind::RmsNorm) {
    return (z.array() * gain.transpose().array()) / stat;
  }
  const RowVec centered = z.array() - z.mean();
  RowVec out = (centered.array() * gain.transpose().array()) / stat;
  if (bias.size() != 0) out += bias.transpose();
  return out;
}

double actValue(Activation act, double x) {
  if (act == Activation::Tanh) return std::tanh(x);
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

double actDerivValue(Activation act, double x) {
  if (act == Activation::Tanh) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  }
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

Mat embed(const ModelParams& params, const std::vector<int>& ids) {
  params.validate();
  require(!ids.empty(), "embed: ids must be nonempty");
  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  const Eigen::Index d = params.config.dModel;
  const bool positions = params.positionTable.size() != 0;
  if (positions && params.positionTable.rows() < n) {
    throw DimensionError("embed: position_table shorter than the sequence");
  }
  Mat x = Mat::Zero(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id == kPlaceholderId) continue;  // hard-zero row
    require(id >= 0 && id < params.config.vocabSize,
            "embed: token id " + std::to_string(id) + " out of range");
    x.row(i) = params.embedding.row(id);
    if (positions) x.row(i) += params.positionTable.row(i);
  }
  return x;
}

ForwardTrace forward(const ModelParams& params, const Mat& x0) {
  params.validate();
  const ModelConfig& cfg = params.config;
  require(x0.rows() >= 1, "forward: input must have at least one row");
  if (x0.cols() != cfg.dModel) throw DimensionError("forward: input column count != d_model");

  const Eigen::Index n = x0.rows();
  const Eigen::Index dh = cfg.dHead;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardTrace tr;
  tr.x.push_back(x0);
  for (int l = 0; l < cfg.nLayers; ++l) {
    const LayerParams& lp = params.layers[static_cast<std::size_t>(l)];
    const Mat& xl = tr.x.back();

    Mat p = applyNorm(cfg.normKind, xl, lp.attnNormGain, lp.attnNormBias, cfg.normEpsilon);
    Mat q = p * lp.wq;
    Mat k = p * lp.wk;
    Mat v = p * lp.wv;
    Mat ctx(n, cfg.dModel);
    std::vector<Mat> probsPerHead;
    for (int h = 0; h < cfg.nHeads; ++h) {
      const auto qh = q.middleCols(h * dh, dh);
      const auto kh = k.middleCols(h * dh, dh);
      Mat scores = qh * kh.transpose() * scale;
      Mat probs = softmaxRows(scores, cfg.causalMask);
      ctx.middleCols(h * dh, dh) = probs * v.middleCols(h * dh, dh);
      probsPerHead.push_back(std::move(probs));
    }
    Mat o = ctx * lp.wo;
    Mat z = xl + o;

    Mat qn = applyNorm(cfg.normKind, z, lp.mlpNormGain, lp.mlpNormBias, cfg.normEpsilon);
    Mat pre = (qn * lp.w1).rowwise() + lp.b1.transpose();
    Mat hid(pre.rows(), pre.cols());
    for (Eigen::Index i = 0; i < pre.rows(); ++i) {
      for (Eigen::Index j = 0; j < pre.cols(); ++j) {
        hid(i, j) = actValue(cfg.activation, pre(i, j));
      }
    }
    Mat m = (hid * lp.w2).rowwise() + lp.b2.transpose();

    tr.attnIn.push_back(std::move(p));
    tr.attnOut.push_back(std::move(o));
    tr.mid.push_back(z);
    tr.mlpIn.push_back(std::move(qn));
    tr.mlpOut.push_back(m);
    tr.attnProbs.push_back(std::move(probsPerHead));
    tr.x.push_back(z + m);
  }
  tr.hidden = applyNorm(cfg.normKind, tr.x.back(), params.finalNormGain, params.finalNormBias,
                        cfg.normEpsilon);
  tr.logits = outputLogits(params, tr);
  return tr;
}

Vec outputLogits(const ModelParams& params, const ForwardTrace& trace) {
  if (trace.hidden.rows() < 1 || trace.hidden.cols() != params.config.dModel) {
    throw DimensionError("outputLogits: trace hidden state has the wrong shape");
  }
  return params.wOut * trace.hidden.row(trace.hidden.rows() - 1).transpose() + params.bOut;
}

ModelParams generateParams(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  SplitMix64 g(seed);
  const Eigen::Index d = config.dModel;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const bool ln = config.normKind == NormKind::LayerNorm;

  ModelParams p;
  p.config = config;
  p.embedding = drawMat(g, config.vocabSize, d, scale);
  for (int l = 0; l < config.nLayers; ++l) {
    LayerParams lp;
    lp.attnNormGain = drawGain(g, d, scale);
    lp.attnNormBias = ln ? drawVec(g, d, scale) : Vec();
    lp.wq = drawMat(g, d, d, scale);
    lp.wk = drawMat(g, d, d, scale);
    lp.wv = drawMat(g, d, d, scale);
    lp.wo = drawMat(g, d, d, scale);
    lp.mlpNormGain = drawGain(g, d, scale);
    lp.mlpNormBias = ln ? drawVec(g, d, scale) : Vec();
    lp.w1 = drawMat(g, d, config.dMlp, scale);
    lp.b1 = drawVec(g, config.dMlp, scale);
    lp.w2 = drawMat(g, config.dMlp, d, scale);
    lp.b2 = drawVec(g, d, scale);
    p.layers.push_back(std::move(lp));
  }
  p.finalNormGain = drawGain(g, d, scale);
  p.finalNormBias = ln ? drawVec(g, d, scale) : Vec();
  p.wOut = drawMat(g, config.vocabSize, d, scale);
  p.bOut = drawVec(g, config.vocabSize, scale);
  return p;
}

}  // namespace red
