#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "btr/pipeline/experiment.hpp"
#include "json.hpp"

namespace btr::pipeline {

/// Commands accepted by Pipeline::run.
const std::vector<std::string>& command_names();

struct RunOptions {
  std::optional<double> lambda;  // rerank: overrides the tuned value
  std::string reranker = "btr";  // btr | encoder_only | r2l | r2l_only | classifier
  std::vector<std::string> splits{"val", "test"};
};

/// Offline experiment driver. Every command reads and writes files under
/// config.out and returns the report it wrote to reports/<name>.json.
/// Timings go to reports/<name>.timing.json so reports stay byte-identical
/// across reruns.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, std::ostream& log);

  const ExperimentConfig& config() const { return cfg_; }

  nlohmann::json run(const std::string& command, const RunOptions& opt = {});

  nlohmann::json synth();
  nlohmann::json train_base();
  nlohmann::json train_r2l();
  /// kind btr or encoder_only; uses config a_train.
  nlohmann::json train_reranker(const std::string& kind);
  nlohmann::json train_classifier();
  nlohmann::json generate();
  nlohmann::json rerank(const std::string& kind, std::optional<double> lambda, const std::vector<std::string>& splits);
  nlohmann::json tune(const std::string& kind);
  nlohmann::json evaluate();
  nlohmann::json profile();
  nlohmann::json compare_decoding();

  /// Name used for checkpoints, decision files and reports of a reranker.
  std::string system_name(const std::string& kind) const;

 private:
  ExperimentConfig cfg_;
  std::ostream& log_;
};

}  // namespace btr::pipeline
