#include "red/engine.hpp"

#include <cmath>

namespace red {

namespace {

void requireInputShape(const PointLinearization& lin, const Subspace& s, const char* what) {
  const Mat& x0 = lin.trace.x.front();
  if (s.ambientRows != x0.rows() || s.ambientCols != x0.cols()) {
    throw DimensionError(std::string(what) + ": subspace ambient shape does not match the input");
  }
}

Subspace image(const PointLinearization& lin, const OpId& op, const Subspace& in, double rankTol) {
  if (in.basis.empty()) return Subspace::zero(in.ambientRows, in.ambientCols);
  std::vector<Mat> images;
  images.reserve(in.basis.size());
  for (const Mat& b : in.basis) images.push_back(opJvp(lin, op, b));
  Subspace out = orthonormalize(images, rankTol);
  if (out.basis.empty()) return Subspace::zero(in.ambientRows, in.ambientCols);
  return out;
}

std::string layerKey(const char* stem, int l) { return std::string(stem) + "." + std::to_string(l); }

// Pull a source at the input boundary of layer l back to the model input.
Mat transportFromLayerInput(const PointLinearization& lin, int l, Mat v) {
  for (int j = l - 1; j >= 0; --j) {
    v = opVjp(lin, OpId::attnBlock(j), opVjp(lin, OpId::mlpBlock(j), v));
  }
  return v;
}

Mat transportFromMid(const PointLinearization& lin, int l, Mat v) {
  return transportFromLayerInput(lin, l, opVjp(lin, OpId::attnBlock(l), v));
}

}  // namespace

SubspaceChain propagateSubspaces(const PointLinearization& lin, const Subspace& u0,
                                 double rankTol) {
  requireInputShape(lin, u0, "propagateSubspaces");
  if (!isOrthonormal(u0)) throw InputError("propagateSubspaces: u0 basis is not orthonormal");

  SubspaceChain chain;
  auto record = [&chain](const std::string& name, const Subspace& s) {
    chain.rankRecord.emplace_back(name, s.dim());
  };

  Subspace cur = u0;
  const int layers = lin.params.config.nLayers;
  for (int l = 0; l < layers; ++l) {
    record(layerKey("x", l), cur);
    chain.atX.push_back(cur);

    chain.atAttnIn.push_back(image(lin, OpId::attnNorm(l), cur, rankTol));
    record(layerKey("attn_in", l), chain.atAttnIn.back());
    chain.atAttnOut.push_back(image(lin, OpId::attn(l), chain.atAttnIn.back(), rankTol));
    record(layerKey("attn_out", l), chain.atAttnOut.back());

    // residual tap: image of the paired identity-plus-branch map
    chain.atMid.push_back(image(lin, OpId::attnBlock(l), cur, rankTol));
    record(layerKey("mid", l), chain.atMid.back());

    chain.atMlpIn.push_back(image(lin, OpId::mlpNorm(l), chain.atMid.back(), rankTol));
    record(layerKey("mlp_in", l), chain.atMlpIn.back());
    chain.atMlpOut.push_back(image(lin, OpId::mlp(l), chain.atMlpIn.back(), rankTol));
    record(layerKey("mlp_out", l), chain.atMlpOut.back());

    cur = image(lin, OpId::mlpBlock(l), chain.atMid.back(), rankTol);
  }
  record(layerKey("x", layers), cur);
  chain.atX.push_back(cur);
  chain.terminal = image(lin, OpId::finalNorm(), cur, rankTol);
  record("terminal", chain.terminal);
  return chain;
}

std::vector<Mat> backwardDirections(const PointLinearization& lin, const Mat& y) {
  const int layers = lin.params.config.nLayers;
  std::vector<Mat> g(static_cast<std::size_t>(2 * layers + 2));
  g[static_cast<std::size_t>(2 * layers + 1)] = y;
  g[static_cast<std::size_t>(2 * layers)] = opVjp(lin, OpId::finalNorm(), y);
  for (int l = layers - 1; l >= 0; --l) {
    g[static_cast<std::size_t>(2 * l + 1)] =
        opVjp(lin, OpId::mlpBlock(l), g[static_cast<std::size_t>(2 * l + 2)]);
    g[static_cast<std::size_t>(2 * l)] =
        opVjp(lin, OpId::attnBlock(l), g[static_cast<std::size_t>(2 * l + 1)]);
  }
  return g;
}

SourceLedger localSources(const PointLinearization& lin, const SubspaceChain& chain, const Mat& y) {
  const int layers = lin.params.config.nLayers;
  if (static_cast<int>(chain.atX.size()) != layers + 1) {
    throw InputError("localSources: chain does not match the linearization");
  }
  const std::vector<Mat> g = backwardDirections(lin, y);

  SourceLedger led;
  for (int l = 0; l < layers; ++l) {
    const std::size_t ul = static_cast<std::size_t>(l);
    LayerSources s;

    // attention block: aligned component at its output, split by where the
    // leakage enters
    const Mat aMid = project(chain.atMid[ul], g[static_cast<std::size_t>(2 * l + 1)]);
    s.bRes1Id = projectComplement(chain.atX[ul], aMid);
    const Mat alignedOut = project(chain.atAttnOut[ul], aMid);
    s.bRes1Add = opVjp(lin, OpId::attnNorm(l), opVjp(lin, OpId::attn(l), aMid - alignedOut));
    const Mat pulled = opVjp(lin, OpId::attn(l), alignedOut);
    const Mat alignedIn = project(chain.atAttnIn[ul], pulled);
    s.bAttn = opVjp(lin, OpId::attnNorm(l), pulled - alignedIn);
    s.bNorm1 = projectComplement(chain.atX[ul], opVjp(lin, OpId::attnNorm(l), alignedIn));

    // MLP block, same shape one boundary later
    const Mat aNext = project(chain.atX[ul + 1], g[static_cast<std::size_t>(2 * l + 2)]);
    s.bRes2Id = projectComplement(chain.atMid[ul], aNext);
    const Mat alignedMlp = project(chain.atMlpOut[ul], aNext);
    s.bRes2Add = opVjp(lin, OpId::mlpNorm(l), opVjp(lin, OpId::mlp(l), aNext - alignedMlp));
    const Mat pulled2 = opVjp(lin, OpId::mlp(l), alignedMlp);
    const Mat alignedIn2 = project(chain.atMlpIn[ul], pulled2);
    s.bMlp = opVjp(lin, OpId::mlpNorm(l), pulled2 - alignedIn2);
    s.bNorm2 = projectComplement(chain.atMid[ul], opVjp(lin, OpId::mlpNorm(l), alignedIn2));

    led.layers.push_back(std::move(s));
  }

  const Mat aTerm = project(chain.terminal, y);
  led.bFinalNorm = projectComplement(chain.atX.back(), opVjp(lin, OpId::finalNorm(), aTerm));
  led.terminal = y - aTerm;
  return led;
}

SourceLedger transportToInput(const PointLinearization& lin, SourceLedger ledger) {
  const int layers = lin.params.config.nLayers;
  if (static_cast<int>(ledger.layers.size()) != layers) {
    throw InputError("transportToInput: ledger does not match the linearization");
  }
  for (int l = 0; l < layers; ++l) {
    LayerSources& s = ledger.layers[static_cast<std::size_t>(l)];
    s.sRes1Id = transportFromLayerInput(lin, l, s.bRes1Id);
    s.sRes1Add = transportFromLayerInput(lin, l, s.bRes1Add);
    s.sAttn = transportFromLayerInput(lin, l, s.bAttn);
    s.sNorm1 = transportFromLayerInput(lin, l, s.bNorm1);
    s.sRes2Id = transportFromMid(lin, l, s.bRes2Id);
    s.sRes2Add = transportFromMid(lin, l, s.bRes2Add);
    s.sMlp = transportFromMid(lin, l, s.bMlp);
    s.sNorm2 = transportFromMid(lin, l, s.bNorm2);
  }
  ledger.sFinalNorm = transportFromLayerInput(lin, layers, ledger.bFinalNorm);
  ledger.sTerminal =
      transportFromLayerInput(lin, layers, opVjp(lin, OpId::finalNorm(), ledger.terminal));
  return ledger;
}

Mat redDirection(const PointLinearization& lin, const Subspace& u0, const Mat& y) {
  requireInputShape(lin, u0, "redDirection");
  return projectComplement(u0, fullVjp(lin, y));
}

DecompositionReport decomposeRed(const PointLinearization& lin, const Subspace& u0, const Mat& y,
                                 double rankTol) {
  requireInputShape(lin, u0, "decomposeRed");
  if (frobNorm(y) == 0.0) throw InputError("decomposeRed: target direction is zero");

  const SubspaceChain chain = propagateSubspaces(lin, u0, rankTol);
  const SourceLedger led = transportToInput(lin, localSources(lin, chain, y));

  const Mat pullback = fullVjp(lin, y);
  DecompositionReport rep;
  rep.rDirect = projectComplement(u0, pullback);
  rep.pullbackNorm = frobNorm(pullback);

  const Eigen::Index n = pullback.rows();
  const Eigen::Index d = pullback.cols();
  rep.sNorm = Mat::Zero(n, d);
  rep.sAttn = Mat::Zero(n, d);
  rep.sMlp = Mat::Zero(n, d);
  rep.sRes = Mat::Zero(n, d);
  for (const LayerSources& s : led.layers) {
    rep.sNorm += s.sNorm1 + s.sNorm2;
    rep.sAttn += s.sAttn;
    rep.sMlp += s.sMlp;
    rep.sRes += s.sRes1Id + s.sRes1Add + s.sRes2Id + s.sRes2Add;
  }
  rep.sNorm += led.sFinalNorm;
  rep.sTerminal = led.sTerminal;

  const Mat total = rep.sNorm + rep.sAttn + rep.sMlp + rep.sRes + rep.sTerminal;
  rep.identityResidual = frobNorm(rep.rDirect - total);
  rep.identityResidualRel =
      relativeResidual(rep.identityResidual, frobNorm(rep.rDirect), frobNorm(total));

  const double rn = frobNorm(rep.rDirect);
  Mat probe;
  if (rn > 1e-9 * rep.pullbackNorm) {
    rep.probe = ProbeKind::UnitRDirect;
    probe = rep.rDirect / rn;
  } else {
    rep.probe = ProbeKind::CoordinateE1;
    probe = Mat::Zero(n, d);
    probe(0, 0) = 1.0;
  }

  for (int l = 0; l < static_cast<int>(led.layers.size()); ++l) {
    const LayerSources& s = led.layers[static_cast<std::size_t>(l)];
    rep.sourceProjections.emplace_back(layerKey("res_id.attn", l), frobInner(s.sRes1Id, probe));
    rep.sourceProjections.emplace_back(layerKey("res_add.attn", l), frobInner(s.sRes1Add, probe));
    rep.sourceProjections.emplace_back(layerKey("attn", l), frobInner(s.sAttn, probe));
    rep.sourceProjections.emplace_back(layerKey("norm.attn", l), frobInner(s.sNorm1, probe));
    rep.sourceProjections.emplace_back(layerKey("res_id.mlp", l), frobInner(s.sRes2Id, probe));
    rep.sourceProjections.emplace_back(layerKey("res_add.mlp", l), frobInner(s.sRes2Add, probe));
    rep.sourceProjections.emplace_back(layerKey("mlp", l), frobInner(s.sMlp, probe));
    rep.sourceProjections.emplace_back(layerKey("norm.mlp", l), frobInner(s.sNorm2, probe));
  }
  rep.sourceProjections.emplace_back("norm.final", frobInner(led.sFinalNorm, probe));
  rep.sourceProjections.emplace_back("terminal", frobInner(led.sTerminal, probe));

  rep.familyProjections["norm"] = frobInner(rep.sNorm, probe);
  rep.familyProjections["attn"] = frobInner(rep.sAttn, probe);
  rep.familyProjections["mlp"] = frobInner(rep.sMlp, probe);
  rep.familyProjections["res"] = frobInner(rep.sRes, probe);
  rep.familyProjections["terminal"] = frobInner(rep.sTerminal, probe);

  rep.familyNorms["norm"] = frobNorm(rep.sNorm);
  rep.familyNorms["attn"] = frobNorm(rep.sAttn);
  rep.familyNorms["mlp"] = frobNorm(rep.sMlp);
  rep.familyNorms["res"] = frobNorm(rep.sRes);
  rep.familyNorms["terminal"] = frobNorm(rep.sTerminal);

  rep.consistency = consistencyResiduals(lin, chain, y);
  rep.rankRecord = chain.rankRecord;
  return rep;
}

double firstOrderEffect(const PointLinearization& lin, const Mat& y, const Mat& dx) {
  const double yn = frobNorm(y);
  if (yn == 0.0) throw InputError("firstOrderEffect: target direction is zero");
  return frobInner(fullJvp(lin, dx), y) / yn;
}

std::vector<double> recurrenceResiduals(const PointLinearization& lin, const SubspaceChain& chain,
                                        const Mat& y) {
  const int layers = lin.params.config.nLayers;
  const std::vector<Mat> g = backwardDirections(lin, y);

  auto boundarySubspace = [&](int t) -> const Subspace& {
    if (t == 2 * layers + 1) return chain.terminal;
    if (t % 2 == 0) return chain.atX[static_cast<std::size_t>(t / 2)];
    return chain.atMid[static_cast<std::size_t>(t / 2)];
  };
  auto blockOp = [&](int t) -> OpId {
    if (t == 2 * layers) return OpId::finalNorm();
    if (t % 2 == 0) return OpId::attnBlock(t / 2);
    return OpId::mlpBlock(t / 2);
  };

  std::vector<double> out;
  for (int t = 0; t <= 2 * layers; ++t) {
    const Subspace& ut = boundarySubspace(t);
    const Subspace& utNext = boundarySubspace(t + 1);
    const Mat& gt = g[static_cast<std::size_t>(t)];
    const Mat& gNext = g[static_cast<std::size_t>(t + 1)];
    const Mat rt = projectComplement(ut, gt);
    const Mat rNext = projectComplement(utNext, gNext);
    const Mat bt = projectComplement(ut, opVjp(lin, blockOp(t), project(utNext, gNext)));
    out.push_back(frobNorm(rt - (bt + opVjp(lin, blockOp(t), rNext))));
  }
  return out;
}

std::map<std::string, double> consistencyResiduals(const PointLinearization& lin,
                                                   const SubspaceChain& chain, const Mat& y) {
  const int layers = lin.params.config.nLayers;
  const std::vector<Mat> g = backwardDirections(lin, y);
  std::map<std::string, double> out;

  for (int l = 0; l < layers; ++l) {
    const std::size_t ul = static_cast<std::size_t>(l);
    const Mat& gMid = g[static_cast<std::size_t>(2 * l + 1)];
    const Mat& gNext = g[static_cast<std::size_t>(2 * l + 2)];

    // norm instances: pull the aligned part of the true backward direction at
    // the norm output through the norm adjoint; report what escapes the
    // input-side subspace
    const Mat gAttnIn = opVjp(lin, OpId::attn(l), gMid);
    const Mat l1 = opVjp(lin, OpId::attnNorm(l), project(chain.atAttnIn[ul], gAttnIn));
    out[layerKey("norm.attn", l)] = frobNorm(projectComplement(chain.atX[ul], l1));

    const Mat gMlpIn = opVjp(lin, OpId::mlp(l), gNext);
    const Mat l2 = opVjp(lin, OpId::mlpNorm(l), project(chain.atMlpIn[ul], gMlpIn));
    out[layerKey("norm.mlp", l)] = frobNorm(projectComplement(chain.atMid[ul], l2));

    // residual branches, before transport to the input
    const Mat aMid = project(chain.atMid[ul], gMid);
    out[layerKey("res_id.attn", l)] = frobNorm(projectComplement(chain.atX[ul], aMid));
    out[layerKey("res_add.attn", l)] = frobNorm(opVjp(
        lin, OpId::attnNorm(l),
        opVjp(lin, OpId::attn(l), aMid - project(chain.atAttnOut[ul], aMid))));

    const Mat aNext = project(chain.atX[ul + 1], gNext);
    out[layerKey("res_id.mlp", l)] = frobNorm(projectComplement(chain.atMid[ul], aNext));
    out[layerKey("res_add.mlp", l)] = frobNorm(opVjp(
        lin, OpId::mlpNorm(l), opVjp(lin, OpId::mlp(l), aNext - project(chain.atMlpOut[ul], aNext))));
  }

  out["norm.final"] = frobNorm(projectComplement(
      chain.atX.back(), opVjp(lin, OpId::finalNorm(), project(chain.terminal, y))));
  out["terminal"] = frobNorm(projectComplement(chain.terminal, y));
  return out;
}

}  // namespace red
