// Command-line front end: seeded model generation, prompt-pair analysis at a
// point and along a path, and the self-verification suite. All outputs are
// JSON (CSV derived from it) with 17-digit floats, so identical invocations
// produce byte-identical files.
#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "red/report.hpp"
#include "red/rng.hpp"
#include "red/verify.hpp"

namespace {

red::NormKind parseNorm(const std::string& s) {
  if (s == "layernorm") return red::NormKind::LayerNorm;
  if (s == "rmsnorm") return red::NormKind::RmsNorm;
  throw red::InputError("unknown norm kind: " + s);
}

red::Activation parseActivation(const std::string& s) {
  if (s == "tanh") return red::Activation::Tanh;
  if (s == "gelu") return red::Activation::Gelu;
  throw red::InputError("unknown activation: " + s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic toy-transformer sensitivity laboratory"};
  app.require_subcommand(1);
  int rc = 0;

  // gen-model
  auto* gen = app.add_subcommand("gen-model", "write a seeded random model file");
  std::string genOut;
  std::uint64_t genSeed = 2026;
  int dModel = 8, nLayers = 2, nHeads = 2, dMlp = 16, vocab = 16;
  std::string normName = "rmsnorm", actName = "tanh";
  double eps = 1e-5;
  bool causal = true;
  gen->add_option("--out", genOut, "output model JSON path")->required();
  gen->add_option("--seed", genSeed, "generator seed");
  gen->add_option("--d-model", dModel, "residual width");
  gen->add_option("--n-layers", nLayers, "layer count");
  gen->add_option("--n-heads", nHeads, "attention heads (must divide --d-model)");
  gen->add_option("--d-mlp", dMlp, "mlp hidden width");
  gen->add_option("--vocab", vocab, "vocabulary size");
  gen->add_option("--norm", normName, "layernorm or rmsnorm");
  gen->add_option("--activation", actName, "tanh or gelu");
  gen->add_option("--eps", eps, "norm epsilon");
  gen->add_flag("--causal,!--no-causal", causal, "causal attention mask");
  gen->callback([&] {
    red::ModelConfig cfg;
    cfg.dModel = dModel;
    cfg.nLayers = nLayers;
    cfg.nHeads = nHeads;
    if (nHeads <= 0 || dModel % nHeads != 0) {
      throw red::InputError("--n-heads must divide --d-model");
    }
    cfg.dHead = dModel / nHeads;
    cfg.dMlp = dMlp;
    cfg.vocabSize = vocab;
    cfg.normKind = parseNorm(normName);
    cfg.activation = parseActivation(actName);
    cfg.normEpsilon = eps;
    cfg.causalMask = causal;
    cfg.validate();
    red::saveModel(red::generateParams(cfg, genSeed), genOut);
  });

  // align
  auto* al = app.add_subcommand("align", "align a prompt pair and write the result");
  std::string alModel, alPair, alOut;
  al->add_option("--model", alModel, "model JSON path")->required();
  al->add_option("--pair", alPair, "prompt pair JSON path")->required();
  al->add_option("--out", alOut, "output alignment JSON path")->required();
  al->callback([&] {
    const red::ModelParams params = red::loadModel(alModel);
    const red::PromptPair pair = red::loadPair(alPair);
    const red::AlignmentResult res =
        red::alignTokens(params.embedding, pair.harmfulIds, pair.jailbreakIds);
    red::writeFile(alOut, red::dumpJson(red::alignmentToJson(res)));
  });

  // analyze-point
  auto* pt = app.add_subcommand(
      "analyze-point", "decompose the escape direction at the clean and padded prompts");
  red::RunConfig ptCfg;
  pt->add_option("--model", ptCfg.modelPath, "model JSON path")->required();
  pt->add_option("--pair", ptCfg.pairPath, "prompt pair JSON path")->required();
  pt->add_option("--out", ptCfg.outPath, "output report JSON path")->required();
  pt->add_option("--rank-tol", ptCfg.rankTol, "basis rank tolerance");
  pt->callback([&] {
    const red::ModelParams params = red::loadModel(ptCfg.modelPath);
    const red::PromptPair pair = red::loadPair(ptCfg.pairPath);
    red::writeFile(ptCfg.outPath, red::dumpJson(red::runPointReport(params, pair, ptCfg)));
  });

  // analyze-path
  auto* pa = app.add_subcommand("analyze-path",
                                "extract path markers and sample the escape ratio along them");
  red::RunConfig paCfg;
  pa->add_option("--model", paCfg.modelPath, "model JSON path")->required();
  pa->add_option("--pair", paCfg.pairPath, "prompt pair JSON path")->required();
  pa->add_option("--out", paCfg.outPath, "output report JSON path")->required();
  pa->add_option("--csv", paCfg.csvPath, "optional per-sample CSV path");
  pa->add_option("--n-grid", paCfg.nGrid, "signal grid size");
  pa->add_option("--n-quad", paCfg.nQuad, "quadrature nodes for the displacement check");
  pa->add_option("--budget", paCfg.budget, "refinement split budget");
  pa->add_option("--activity-eps", paCfg.activityEps, "refinement activity cutoff");
  pa->add_option("--rank-tol", paCfg.rankTol, "basis rank tolerance");
  pa->add_option("--denom-tol", paCfg.denomTolScale, "ratio denominator tolerance scale");
  pa->callback([&] {
    const red::ModelParams params = red::loadModel(paCfg.modelPath);
    const red::PromptPair pair = red::loadPair(paCfg.pairPath);
    const red::PathReport rep = red::runPathReport(params, pair, paCfg);
    red::writeFile(paCfg.outPath, red::dumpJson(rep.json));
    if (!paCfg.csvPath.empty()) red::writeFile(paCfg.csvPath, rep.csv);
    if (rep.degenerate) {
      std::cerr << "warning: degenerate path, markers not extracted\n";
    }
  });

  // verify
  auto* ver = app.add_subcommand("verify", "run the full invariant suite");
  std::uint64_t verSeed = 2026;
  double verFdH = 1e-5;
  std::string verOut;
  ver->add_option("--seed", verSeed, "suite seed");
  ver->add_option("--fd-h", verFdH, "finite-difference step for the FD check");
  ver->add_option("--out", verOut, "optional summary JSON path");
  ver->callback([&] {
    const auto t0 = std::chrono::steady_clock::now();
    red::VerifyOptions opts;
    opts.seed = verSeed;
    opts.fdH = verFdH;
    const std::vector<red::CheckResult> checks = red::runVerifySuite(opts);
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    bool all = true;
    for (const red::CheckResult& c : checks) {
      std::printf("[%s] %s (worst=%s, threshold=%s, %.2fs)\n", c.pass ? "PASS" : "FAIL",
                  c.name.c_str(), red::formatDouble(c.worst).c_str(),
                  red::formatDouble(c.threshold).c_str(), c.seconds);
      if (!c.pass) {
        all = false;
        std::cerr << "failed: " << c.name << " " << c.detail << "\n";
      }
    }
    std::printf("%s: %zu checks in %.2fs\n", all ? "OK" : "FAILED", checks.size(), total);
    if (!verOut.empty()) {
      red::writeFile(verOut, red::dumpJson(red::verifySummaryJson(checks, total)));
    }
    if (!all) rc = 1;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
