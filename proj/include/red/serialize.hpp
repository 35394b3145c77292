#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "red/path.hpp"

namespace red {

using OrderedJson = nlohmann::ordered_json;

// JSON text with insertion-ordered keys and every float printed with 17
// significant digits, so emitted files are byte-stable and round-trip exact.
std::string dumpJson(const OrderedJson& j, int indent = 2);
std::string formatDouble(double v);

OrderedJson matToJson(const Mat& m);
Mat matFromJson(const nlohmann::json& j);
OrderedJson vecToJson(const Vec& v);  // serialized as a 1 x n matrix
Vec vecFromJson(const nlohmann::json& j);

OrderedJson modelToJson(const ModelParams& p);
ModelParams modelFromJson(const nlohmann::json& j);
void saveModel(const ModelParams& p, const std::string& file);
ModelParams loadModel(const std::string& file);

OrderedJson tokensToJson(const std::vector<int>& ids);
std::vector<int> tokensFromJson(const nlohmann::json& j);
std::vector<int> loadTokens(const std::string& file);

struct PromptPair {
  std::vector<int> harmfulIds, jailbreakIds;
};

OrderedJson pairToJson(const PromptPair& p);
PromptPair pairFromJson(const nlohmann::json& j);
PromptPair loadPair(const std::string& file);

OrderedJson alignmentToJson(const AlignmentResult& a);
AlignmentResult alignmentFromJson(const nlohmann::json& j);

OrderedJson reportToJson(const DecompositionReport& rep);
OrderedJson extractionToJson(const ExtractionResult& ex);
OrderedJson sampleToJson(const PathSample& s);

// one row per (eta, metric)
std::string pathSamplesCsv(const std::vector<PathSample>& samples);

void writeFile(const std::string& file, const std::string& content);
std::string readFile(const std::string& file);

}  // namespace red
