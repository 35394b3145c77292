#include "red/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace red {

namespace {

void emitJson(const OrderedJson& j, std::string& out, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string padEnd(static_cast<std::size_t>(indent * depth), ' ');
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad;
        out += nlohmann::json(it.key()).dump();
        out += ": ";
        emitJson(it.value(), out, indent, depth + 1);
      }
      out += "\n" + padEnd + "}";
      return;
    }
    case nlohmann::json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // arrays of scalars stay on one line; arrays of structures get split
      bool scalarOnly = true;
      for (const auto& el : j) {
        if (el.is_object() || el.is_array()) {
          scalarOnly = false;
          break;
        }
      }
      if (scalarOnly) {
        out += "[";
        bool first = true;
        for (const auto& el : j) {
          if (!first) out += ", ";
          first = false;
          emitJson(el, out, indent, depth + 1);
        }
        out += "]";
        return;
      }
      out += "[\n";
      bool first = true;
      for (const auto& el : j) {
        if (!first) out += ",\n";
        first = false;
        out += pad;
        emitJson(el, out, indent, depth + 1);
      }
      out += "\n" + padEnd + "]";
      return;
    }
    case nlohmann::json::value_t::string:
      out += j.dump();
      return;
    case nlohmann::json::value_t::boolean:
      out += j.get<bool>() ? "true" : "false";
      return;
    case nlohmann::json::value_t::number_integer:
      out += std::to_string(j.get<std::int64_t>());
      return;
    case nlohmann::json::value_t::number_unsigned:
      out += std::to_string(j.get<std::uint64_t>());
      return;
    case nlohmann::json::value_t::number_float:
      out += formatDouble(j.get<double>());
      return;
    default:
      out += "null";
      return;
  }
}

std::string normKindName(NormKind k) {
  return k == NormKind::LayerNorm ? "layernorm" : "rmsnorm";
}

NormKind normKindFromName(const std::string& s) {
  if (s == "layernorm") return NormKind::LayerNorm;
  if (s == "rmsnorm") return NormKind::RmsNorm;
  throw InputError("unknown norm kind: " + s);
}

std::string activationName(Activation a) { return a == Activation::Tanh ? "tanh" : "gelu"; }

Activation activationFromName(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "gelu") return Activation::Gelu;
  throw InputError("unknown activation: " + s);
}

std::vector<int> intVector(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) throw InputError(std::string(what) + ": expected an array");
  std::vector<int> out;
  out.reserve(j.size());
  for (const auto& el : j) {
    if (!el.is_number_integer()) throw InputError(std::string(what) + ": expected integers");
    out.push_back(el.get<int>());
  }
  return out;
}

}  // namespace

std::string formatDouble(double v) {
  if (std::isnan(v) || std::isinf(v)) return "null";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string dumpJson(const OrderedJson& j, int indent) {
  std::string out;
  emitJson(j, out, indent, 0);
  out += "\n";
  return out;
}

OrderedJson matToJson(const Mat& m) {
  OrderedJson j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  OrderedJson data = OrderedJson::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(i, c));
  }
  j["data"] = std::move(data);
  return j;
}

Mat matFromJson(const nlohmann::json& j) {
  if (!j.contains("rows") || !j.contains("cols") || !j.contains("data")) {
    throw InputError("matrix JSON requires rows, cols, data");
  }
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw InputError("matrix JSON data length does not match rows*cols");
  }
  Mat m(rows, cols);
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(i, c) = data.at(static_cast<std::size_t>(idx++)).get<double>();
    }
  }
  return m;
}

OrderedJson vecToJson(const Vec& v) { return matToJson(v.transpose()); }

Vec vecFromJson(const nlohmann::json& j) {
  const Mat m = matFromJson(j);
  if (m.rows() != 1 && m.size() != 0) throw InputError("vector JSON must be a 1-row matrix");
  return m.row(0).transpose();
}

OrderedJson modelToJson(const ModelParams& p) {
  const bool ln = p.config.normKind == NormKind::LayerNorm;
  OrderedJson cfg;
  cfg["d_model"] = p.config.dModel;
  cfg["n_layers"] = p.config.nLayers;
  cfg["n_heads"] = p.config.nHeads;
  cfg["d_head"] = p.config.dHead;
  cfg["d_mlp"] = p.config.dMlp;
  cfg["vocab_size"] = p.config.vocabSize;
  cfg["norm_kind"] = normKindName(p.config.normKind);
  cfg["activation"] = activationName(p.config.activation);
  cfg["norm_epsilon"] = p.config.normEpsilon;
  cfg["causal_mask"] = p.config.causalMask;

  OrderedJson layers = OrderedJson::array();
  for (const LayerParams& lp : p.layers) {
    OrderedJson l;
    l["attn_norm_gain"] = vecToJson(lp.attnNormGain);
    if (ln) l["attn_norm_bias"] = vecToJson(lp.attnNormBias);
    l["w_q"] = matToJson(lp.wq);
    l["w_k"] = matToJson(lp.wk);
    l["w_v"] = matToJson(lp.wv);
    l["w_o"] = matToJson(lp.wo);
    l["mlp_norm_gain"] = vecToJson(lp.mlpNormGain);
    if (ln) l["mlp_norm_bias"] = vecToJson(lp.mlpNormBias);
    l["w_1"] = matToJson(lp.w1);
    l["b_1"] = vecToJson(lp.b1);
    l["w_2"] = matToJson(lp.w2);
    l["b_2"] = vecToJson(lp.b2);
    layers.push_back(std::move(l));
  }

  OrderedJson params;
  params["embedding"] = matToJson(p.embedding);
  if (p.positionTable.size() != 0) params["position_table"] = matToJson(p.positionTable);
  params["layers"] = std::move(layers);
  params["final_norm_gain"] = vecToJson(p.finalNormGain);
  if (ln) params["final_norm_bias"] = vecToJson(p.finalNormBias);
  params["w_out"] = matToJson(p.wOut);
  params["b_out"] = vecToJson(p.bOut);

  OrderedJson j;
  j["config"] = std::move(cfg);
  j["params"] = std::move(params);
  return j;
}

ModelParams modelFromJson(const nlohmann::json& j) {
  const auto& cfg = j.at("config");
  ModelParams p;
  p.config.dModel = cfg.at("d_model").get<int>();
  p.config.nLayers = cfg.at("n_layers").get<int>();
  p.config.nHeads = cfg.at("n_heads").get<int>();
  p.config.dHead = cfg.at("d_head").get<int>();
  p.config.dMlp = cfg.at("d_mlp").get<int>();
  p.config.vocabSize = cfg.at("vocab_size").get<int>();
  p.config.normKind = normKindFromName(cfg.at("norm_kind").get<std::string>());
  p.config.activation = activationFromName(cfg.at("activation").get<std::string>());
  p.config.normEpsilon = cfg.at("norm_epsilon").get<double>();
  p.config.causalMask = cfg.at("causal_mask").get<bool>();

  const bool ln = p.config.normKind == NormKind::LayerNorm;
  const auto& params = j.at("params");
  p.embedding = matFromJson(params.at("embedding"));
  if (params.contains("position_table")) p.positionTable = matFromJson(params.at("position_table"));
  for (const auto& l : params.at("layers")) {
    LayerParams lp;
    lp.attnNormGain = vecFromJson(l.at("attn_norm_gain"));
    if (ln) lp.attnNormBias = vecFromJson(l.at("attn_norm_bias"));
    lp.wq = matFromJson(l.at("w_q"));
    lp.wk = matFromJson(l.at("w_k"));
    lp.wv = matFromJson(l.at("w_v"));
    lp.wo = matFromJson(l.at("w_o"));
    lp.mlpNormGain = vecFromJson(l.at("mlp_norm_gain"));
    if (ln) lp.mlpNormBias = vecFromJson(l.at("mlp_norm_bias"));
    lp.w1 = matFromJson(l.at("w_1"));
    lp.b1 = vecFromJson(l.at("b_1"));
    lp.w2 = matFromJson(l.at("w_2"));
    lp.b2 = vecFromJson(l.at("b_2"));
    p.layers.push_back(std::move(lp));
  }
  p.finalNormGain = vecFromJson(params.at("final_norm_gain"));
  if (ln) p.finalNormBias = vecFromJson(params.at("final_norm_bias"));
  p.wOut = matFromJson(params.at("w_out"));
  p.bOut = vecFromJson(params.at("b_out"));
  p.validate();
  return p;
}

void saveModel(const ModelParams& p, const std::string& file) {
  writeFile(file, dumpJson(modelToJson(p)));
}

ModelParams loadModel(const std::string& file) {
  return modelFromJson(nlohmann::json::parse(readFile(file)));
}

OrderedJson tokensToJson(const std::vector<int>& ids) {
  OrderedJson j;
  j["ids"] = ids;
  return j;
}

std::vector<int> tokensFromJson(const nlohmann::json& j) {
  return intVector(j.at("ids"), "token file ids");
}

std::vector<int> loadTokens(const std::string& file) {
  return tokensFromJson(nlohmann::json::parse(readFile(file)));
}

OrderedJson pairToJson(const PromptPair& p) {
  OrderedJson j;
  j["harmful_ids"] = p.harmfulIds;
  j["jailbreak_ids"] = p.jailbreakIds;
  return j;
}

PromptPair pairFromJson(const nlohmann::json& j) {
  PromptPair p;
  p.harmfulIds = intVector(j.at("harmful_ids"), "harmful_ids");
  p.jailbreakIds = intVector(j.at("jailbreak_ids"), "jailbreak_ids");
  return p;
}

PromptPair loadPair(const std::string& file) {
  return pairFromJson(nlohmann::json::parse(readFile(file)));
}

OrderedJson alignmentToJson(const AlignmentResult& a) {
  OrderedJson j;
  j["aligned_a"] = a.alignedA;
  j["aligned_b"] = a.alignedB;
  j["provenance_a"] = a.provenanceA;
  j["provenance_b"] = a.provenanceB;
  return j;
}

AlignmentResult alignmentFromJson(const nlohmann::json& j) {
  AlignmentResult a;
  a.alignedA = intVector(j.at("aligned_a"), "aligned_a");
  a.alignedB = intVector(j.at("aligned_b"), "aligned_b");
  a.provenanceA = intVector(j.at("provenance_a"), "provenance_a");
  a.provenanceB = intVector(j.at("provenance_b"), "provenance_b");
  return a;
}

OrderedJson reportToJson(const DecompositionReport& rep) {
  OrderedJson j;
  j["probe"] = rep.probe == ProbeKind::UnitRDirect ? "unit_red" : "coordinate_e1";
  j["red_norm"] = frobNorm(rep.rDirect);
  j["pullback_norm"] = rep.pullbackNorm;
  j["identity_residual"] = rep.identityResidual;
  j["identity_residual_rel"] = rep.identityResidualRel;

  OrderedJson fam;
  for (const auto& [k, v] : rep.familyNorms) fam[k] = v;
  j["family_norms"] = std::move(fam);
  OrderedJson famP;
  for (const auto& [k, v] : rep.familyProjections) famP[k] = v;
  j["family_projections"] = std::move(famP);

  OrderedJson src = OrderedJson::array();
  for (const auto& [name, v] : rep.sourceProjections) {
    OrderedJson e;
    e["source"] = name;
    e["projection"] = v;
    src.push_back(std::move(e));
  }
  j["source_projections"] = std::move(src);

  OrderedJson cons;
  for (const auto& [k, v] : rep.consistency) cons[k] = v;
  j["consistency_residuals"] = std::move(cons);

  OrderedJson ranks = OrderedJson::array();
  for (const auto& [tap, dim] : rep.rankRecord) {
    OrderedJson e;
    e["tap"] = tap;
    e["dim"] = dim;
    ranks.push_back(std::move(e));
  }
  j["rank_record"] = std::move(ranks);
  return j;
}

OrderedJson extractionToJson(const ExtractionResult& ex) {
  OrderedJson j;
  j["degenerate"] = ex.degenerate;
  j["eta1"] = ex.eta1;
  j["eta2"] = ex.eta2;
  j["eta3"] = ex.eta3;
  j["eta4"] = ex.eta4;
  j["eta5"] = ex.eta5;
  OrderedJson grid = OrderedJson::array();
  for (const GridPoint& g : ex.grid) {
    OrderedJson e;
    e["eta"] = g.eta;
    e["signal"] = g.signal;
    e["coeff"] = g.coeff;
    grid.push_back(std::move(e));
  }
  j["grid"] = std::move(grid);
  OrderedJson ref = OrderedJson::array();
  for (const SplitRecord& r : ex.refinement) {
    OrderedJson e;
    e["lo"] = r.lo;
    e["hi"] = r.hi;
    e["activity"] = r.activity;
    ref.push_back(std::move(e));
  }
  j["refinement"] = std::move(ref);
  return j;
}

OrderedJson sampleToJson(const PathSample& s) {
  OrderedJson j;
  j["eta"] = s.eta;
  j["signal"] = s.signal;
  j["coeff"] = s.coeff;
  j["red_norm"] = s.redNorm;
  OrderedJson rho;
  rho["defined"] = s.rho.defined;
  if (s.rho.defined) rho["value"] = s.rho.value;
  rho["numerator"] = s.rho.numerator;
  rho["denominator"] = s.rho.denominator;
  j["rho"] = std::move(rho);
  OrderedJson al;
  for (const auto& [k, v] : s.alignments) al[k] = v;
  j["family_alignments"] = std::move(al);
  return j;
}

std::string pathSamplesCsv(const std::vector<PathSample>& samples) {
  std::string out = "eta,metric,value\n";
  auto row = [&out](double eta, const std::string& metric, double v) {
    out += formatDouble(eta) + "," + metric + "," + formatDouble(v) + "\n";
  };
  for (const PathSample& s : samples) {
    row(s.eta, "signal", s.signal);
    row(s.eta, "coeff", s.coeff);
    row(s.eta, "red_norm", s.redNorm);
    row(s.eta, "rho_defined", s.rho.defined ? 1.0 : 0.0);
    if (s.rho.defined) row(s.eta, "rho", s.rho.value);
    for (const auto& [k, v] : s.alignments) row(s.eta, "align_" + k, v);
  }
  return out;
}

void writeFile(const std::string& file, const std::string& content) {
  std::ofstream f(file, std::ios::binary);
  if (!f) throw InputError("cannot open for writing: " + file);
  f << content;
  if (!f) throw InputError("write failed: " + file);
}

std::string readFile(const std::string& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw InputError("cannot open for reading: " + file);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace red
