#include "red/jacobian.hpp"

#include <cmath>

namespace red {

namespace {

void requireTap(const PointLinearization& lin, const Mat& v, const char* what) {
  const Mat& x0 = lin.trace.x.front();
  if (v.rows() != x0.rows() || v.cols() != x0.cols()) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(x0.rows()) + "x" +
                         std::to_string(x0.cols()) + ", got " + std::to_string(v.rows()) + "x" +
                         std::to_string(v.cols()));
  }
}

void requireLayer(const PointLinearization& lin, const OpId& op) {
  if (op.tag == OpId::Tag::FinalNorm) return;
  if (op.layer < 0 || op.layer >= lin.params.config.nLayers) {
    throw InputError("op layer index out of range: " + std::to_string(op.layer));
  }
}

Mat normMatJvp(NormKind kind, const Mat& z, const Vec& gain, const Vec& stat, const Mat& dz) {
  const double d = static_cast<double>(z.cols());
  Mat out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double s = stat(i);
    const RowVec zi = z.row(i);
    const RowVec dzi = dz.row(i);
    RowVec w;
    if (kind == NormKind::RmsNorm) {
      w = dzi - zi * (zi.dot(dzi) / (d * s * s));
    } else {
      const RowVec zbar = zi.array() - zi.mean();
      const RowVec cdz = dzi.array() - dzi.mean();
      w = cdz - zbar * (zbar.dot(dzi) / (d * s * s));
    }
    out.row(i) = (w.array() * gain.transpose().array()) / s;
  }
  return out;
}

Mat normMatVjp(NormKind kind, const Mat& z, const Vec& gain, const Vec& stat, const Mat& a) {
  const double d = static_cast<double>(z.cols());
  Mat out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double s = stat(i);
    const RowVec zi = z.row(i);
    const RowVec u = a.row(i).array() * gain.transpose().array();
    RowVec w;
    if (kind == NormKind::RmsNorm) {
      w = u - zi * (zi.dot(u) / (d * s * s));
    } else {
      const RowVec zbar = zi.array() - zi.mean();
      const RowVec cu = u.array() - u.mean();
      w = cu - zbar * (zbar.dot(u) / (d * s * s));
    }
    out.row(i) = w / s;
  }
  return out;
}

Mat attnJvp(const PointLinearization& lin, int l, const Mat& dp) {
  const ModelConfig& cfg = lin.params.config;
  const LayerParams& lp = lin.params.layers[static_cast<std::size_t>(l)];
  const Eigen::Index n = dp.rows();
  const Eigen::Index dh = cfg.dHead;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Mat dq = dp * lp.wq;
  const Mat dk = dp * lp.wk;
  const Mat dv = dp * lp.wv;
  Mat dctx(n, cfg.dModel);
  for (int h = 0; h < cfg.nHeads; ++h) {
    const auto qh = lin.q[static_cast<std::size_t>(l)].middleCols(h * dh, dh);
    const auto kh = lin.k[static_cast<std::size_t>(l)].middleCols(h * dh, dh);
    const auto vh = lin.v[static_cast<std::size_t>(l)].middleCols(h * dh, dh);
    const auto dqh = dq.middleCols(h * dh, dh);
    const auto dkh = dk.middleCols(h * dh, dh);
    const auto dvh = dv.middleCols(h * dh, dh);
    const Mat& probs = lin.trace.attnProbs[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];

    const Mat ds = (dqh * kh.transpose() + qh * dkh.transpose()) * scale;
    Mat dprobs(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      dprobs.row(i) = softmaxJvpRow(probs.row(i), ds.row(i));
    }
    dctx.middleCols(h * dh, dh) = dprobs * vh + probs * dvh;
  }
  return dctx * lp.wo;
}

Mat attnVjp(const PointLinearization& lin, int l, const Mat& g) {
  const ModelConfig& cfg = lin.params.config;
  const LayerParams& lp = lin.params.layers[static_cast<std::size_t>(l)];
  const Eigen::Index n = g.rows();
  const Eigen::Index dh = cfg.dHead;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Mat gctx = g * lp.wo.transpose();
  Mat gq = Mat::Zero(n, cfg.dModel);
  Mat gk = Mat::Zero(n, cfg.dModel);
  Mat gv = Mat::Zero(n, cfg.dModel);
  for (int h = 0; h < cfg.nHeads; ++h) {
    const auto qh = lin.q[static_cast<std::size_t>(l)].middleCols(h * dh, dh);
    const auto kh = lin.k[static_cast<std::size_t>(l)].middleCols(h * dh, dh);
    const auto vh = lin.v[static_cast<std::size_t>(l)].middleCols(h * dh, dh);
    const auto gctxh = gctx.middleCols(h * dh, dh);
    const Mat& probs = lin.trace.attnProbs[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];

    const Mat gprobs = gctxh * vh.transpose();
    gv.middleCols(h * dh, dh) = probs.transpose() * gctxh;
    // the per-row softmax Jacobian diag(s) - s s^T is symmetric
    Mat gs(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      gs.row(i) = softmaxJvpRow(probs.row(i), gprobs.row(i));
    }
    gq.middleCols(h * dh, dh) = gs * kh * scale;
    gk.middleCols(h * dh, dh) = gs.transpose() * qh * scale;
  }
  return gq * lp.wq.transpose() + gk * lp.wk.transpose() + gv * lp.wv.transpose();
}

Mat mlpJvp(const PointLinearization& lin, int l, const Mat& dqn) {
  const LayerParams& lp = lin.params.layers[static_cast<std::size_t>(l)];
  const Mat dpre = dqn * lp.w1;
  return (lin.actDeriv[static_cast<std::size_t>(l)].array() * dpre.array()).matrix() * lp.w2;
}

Mat mlpVjp(const PointLinearization& lin, int l, const Mat& g) {
  const LayerParams& lp = lin.params.layers[static_cast<std::size_t>(l)];
  const Mat gpre =
      (g * lp.w2.transpose()).array() * lin.actDeriv[static_cast<std::size_t>(l)].array();
  return gpre * lp.w1.transpose();
}

}  // namespace

std::string opName(const OpId& op) {
  switch (op.tag) {
    case OpId::Tag::AttnNorm: return "attn_norm." + std::to_string(op.layer);
    case OpId::Tag::Attn: return "attn." + std::to_string(op.layer);
    case OpId::Tag::AttnBlock: return "attn_block." + std::to_string(op.layer);
    case OpId::Tag::MlpNorm: return "mlp_norm." + std::to_string(op.layer);
    case OpId::Tag::Mlp: return "mlp." + std::to_string(op.layer);
    case OpId::Tag::MlpBlock: return "mlp_block." + std::to_string(op.layer);
    case OpId::Tag::FinalNorm: return "final_norm";
  }
  return "unknown";
}

RowVec softmaxJvpRow(const RowVec& probs, const RowVec& ds) {
  const double rowDot = probs.dot(ds);
  return probs.array() * (ds.array() - rowDot);
}

RowVec normRowJvp(NormKind kind, const RowVec& z, const Vec& gain, double eps, const RowVec& dz) {
  Vec stat(1);
  stat(0) = normRowStat(kind, z, eps);
  Mat zm(1, z.size()), dzm(1, z.size());
  zm.row(0) = z;
  dzm.row(0) = dz;
  return normMatJvp(kind, zm, gain, stat, dzm).row(0);
}

RowVec normRowVjp(NormKind kind, const RowVec& z, const Vec& gain, double eps, const RowVec& a) {
  Vec stat(1);
  stat(0) = normRowStat(kind, z, eps);
  Mat zm(1, z.size()), am(1, z.size());
  zm.row(0) = z;
  am.row(0) = a;
  return normMatVjp(kind, zm, gain, stat, am).row(0);
}

PointLinearization linearize(const ModelParams& params, const Mat& x) {
  PointLinearization lin;
  lin.params = params;
  lin.trace = forward(params, x);
  const ModelConfig& cfg = params.config;
  const Eigen::Index n = x.rows();

  for (int l = 0; l < cfg.nLayers; ++l) {
    const LayerParams& lp = params.layers[static_cast<std::size_t>(l)];
    const Mat& xl = lin.trace.x[static_cast<std::size_t>(l)];
    const Mat& zl = lin.trace.mid[static_cast<std::size_t>(l)];
    Vec sa(n), sm(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      sa(i) = normRowStat(cfg.normKind, xl.row(i), cfg.normEpsilon);
      sm(i) = normRowStat(cfg.normKind, zl.row(i), cfg.normEpsilon);
    }
    lin.attnNormStat.push_back(std::move(sa));
    lin.mlpNormStat.push_back(std::move(sm));

    const Mat& p = lin.trace.attnIn[static_cast<std::size_t>(l)];
    lin.q.push_back(p * lp.wq);
    lin.k.push_back(p * lp.wk);
    lin.v.push_back(p * lp.wv);

    const Mat pre =
        (lin.trace.mlpIn[static_cast<std::size_t>(l)] * lp.w1).rowwise() + lp.b1.transpose();
    Mat deriv(pre.rows(), pre.cols());
    for (Eigen::Index i = 0; i < pre.rows(); ++i) {
      for (Eigen::Index j = 0; j < pre.cols(); ++j) {
        deriv(i, j) = actDerivValue(cfg.activation, pre(i, j));
      }
    }
    lin.actDeriv.push_back(std::move(deriv));
  }
  lin.finalNormStat = Vec(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    lin.finalNormStat(i) = normRowStat(cfg.normKind, lin.trace.x.back().row(i), cfg.normEpsilon);
  }
  return lin;
}

Mat opJvp(const PointLinearization& lin, const OpId& op, const Mat& dv) {
  requireTap(lin, dv, "opJvp");
  requireLayer(lin, op);
  const ModelConfig& cfg = lin.params.config;
  const std::size_t l = static_cast<std::size_t>(op.layer);
  switch (op.tag) {
    case OpId::Tag::AttnNorm:
      return normMatJvp(cfg.normKind, lin.trace.x[l], lin.params.layers[l].attnNormGain,
                        lin.attnNormStat[l], dv);
    case OpId::Tag::Attn:
      return attnJvp(lin, op.layer, dv);
    case OpId::Tag::AttnBlock:
      return dv + attnJvp(lin, op.layer, opJvp(lin, OpId::attnNorm(op.layer), dv));
    case OpId::Tag::MlpNorm:
      return normMatJvp(cfg.normKind, lin.trace.mid[l], lin.params.layers[l].mlpNormGain,
                        lin.mlpNormStat[l], dv);
    case OpId::Tag::Mlp:
      return mlpJvp(lin, op.layer, dv);
    case OpId::Tag::MlpBlock:
      return dv + mlpJvp(lin, op.layer, opJvp(lin, OpId::mlpNorm(op.layer), dv));
    case OpId::Tag::FinalNorm:
      return normMatJvp(cfg.normKind, lin.trace.x.back(), lin.params.finalNormGain,
                        lin.finalNormStat, dv);
  }
  throw InputError("opJvp: unknown op tag");
}

Mat opVjp(const PointLinearization& lin, const OpId& op, const Mat& g) {
  requireTap(lin, g, "opVjp");
  requireLayer(lin, op);
  const ModelConfig& cfg = lin.params.config;
  const std::size_t l = static_cast<std::size_t>(op.layer);
  switch (op.tag) {
    case OpId::Tag::AttnNorm:
      return normMatVjp(cfg.normKind, lin.trace.x[l], lin.params.layers[l].attnNormGain,
                        lin.attnNormStat[l], g);
    case OpId::Tag::Attn:
      return attnVjp(lin, op.layer, g);
    case OpId::Tag::AttnBlock:
      return g + opVjp(lin, OpId::attnNorm(op.layer), attnVjp(lin, op.layer, g));
    case OpId::Tag::MlpNorm:
      return normMatVjp(cfg.normKind, lin.trace.mid[l], lin.params.layers[l].mlpNormGain,
                        lin.mlpNormStat[l], g);
    case OpId::Tag::Mlp:
      return mlpVjp(lin, op.layer, g);
    case OpId::Tag::MlpBlock:
      return g + opVjp(lin, OpId::mlpNorm(op.layer), mlpVjp(lin, op.layer, g));
    case OpId::Tag::FinalNorm:
      return normMatVjp(cfg.normKind, lin.trace.x.back(), lin.params.finalNormGain,
                        lin.finalNormStat, g);
  }
  throw InputError("opVjp: unknown op tag");
}

Mat fullJvp(const PointLinearization& lin, const Mat& dx) {
  requireTap(lin, dx, "fullJvp");
  Mat dv = dx;
  for (int l = 0; l < lin.params.config.nLayers; ++l) {
    dv = opJvp(lin, OpId::mlpBlock(l), opJvp(lin, OpId::attnBlock(l), dv));
  }
  return opJvp(lin, OpId::finalNorm(), dv);
}

Mat fullVjp(const PointLinearization& lin, const Mat& y) {
  requireTap(lin, y, "fullVjp");
  Mat g = opVjp(lin, OpId::finalNorm(), y);
  for (int l = lin.params.config.nLayers - 1; l >= 0; --l) {
    g = opVjp(lin, OpId::attnBlock(l), opVjp(lin, OpId::mlpBlock(l), g));
  }
  return g;
}

Mat fdJvpOracle(const ModelParams& params, const Mat& x, const Mat& dx, double h) {
  if (!(h > 0.0)) throw InputError("fdJvpOracle: step must be positive");
  if (dx.rows() != x.rows() || dx.cols() != x.cols()) {
    throw DimensionError("fdJvpOracle: dx shape mismatch");
  }
  const Mat plus = forward(params, x + h * dx).hidden;
  const Mat minus = forward(params, x - h * dx).hidden;
  return (plus - minus) / (2.0 * h);
}

}  // namespace red
