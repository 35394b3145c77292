#pragma once

#include <cstdint>
#include <vector>

#include "red/linalg.hpp"

namespace red {

enum class NormKind { LayerNorm, RmsNorm };
enum class Activation { Tanh, Gelu };

// Reserved token id whose embedding row is hard zero.
constexpr int kPlaceholderId = -1;

struct ModelConfig {
  int dModel = 8;
  int nLayers = 2;
  int nHeads = 2;
  int dHead = 4;
  int dMlp = 16;
  int vocabSize = 16;
  NormKind normKind = NormKind::RmsNorm;
  Activation activation = Activation::Tanh;
  double normEpsilon = 1e-5;
  bool causalMask = true;

  void validate() const;  // throws InputError
};

struct LayerParams {
  Vec attnNormGain, attnNormBias;  // bias present for layernorm only
  Mat wq, wk, wv, wo;              // d x d, heads are column blocks of width dHead
  Vec mlpNormGain, mlpNormBias;
  Mat w1;  // d x dMlp
  Vec b1;
  Mat w2;  // dMlp x d
  Vec b2;
};

struct ModelParams {
  ModelConfig config;
  Mat embedding;      // vocab x d
  Mat positionTable;  // optional additive positions (0x0 when absent); added to
                      // real-token rows only, placeholder rows stay zero
  std::vector<LayerParams> layers;
  Vec finalNormGain, finalNormBias;
  Mat wOut;  // vocab x d
  Vec bOut;

  void validate() const;
};

struct ForwardTrace {
  std::vector<Mat> x;        // residual-stream input per layer; x[L] feeds the final norm
  std::vector<Mat> attnIn;   // normalized input to attention
  std::vector<Mat> attnOut;  // attention branch output
  std::vector<Mat> mid;      // x[l] + attnOut[l]
  std::vector<Mat> mlpIn;    // normalized input to the MLP
  std::vector<Mat> mlpOut;   // MLP branch output
  Mat hidden;                // final-norm output
  Vec logits;                // final-token row through the output head
  std::vector<std::vector<Mat>> attnProbs;  // [layer][head], rows sum to 1
};

Mat embed(const ModelParams& params, const std::vector<int>& ids);
ForwardTrace forward(const ModelParams& params, const Mat& x);
Vec outputLogits(const ModelParams& params, const ForwardTrace& trace);

// Seeded deterministic parameter draw; same (config, seed) gives bitwise
// identical params on any platform.
ModelParams generateParams(const ModelConfig& config, std::uint64_t seed);

// One row of a pre-norm operator (shared by forward and linearization).
double normRowStat(NormKind kind, const RowVec& z, double eps);
RowVec applyNormRow(NormKind kind, const RowVec& z, const Vec& gain, const Vec& bias, double eps);

double actValue(Activation act, double x);
double actDerivValue(Activation act, double x);

}  // namespace red
