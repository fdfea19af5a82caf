#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "btr/decode/search.hpp"
#include "btr/model/config.hpp"
#include "btr/text/corpus.hpp"
#include "btr/training/train.hpp"
#include "json.hpp"

namespace btr::pipeline {

/// Training stages, each with its own model and train settings:
/// base, r2l, btr, encoder_only, classifier.
const std::vector<std::string>& stage_names();
model::Role stage_role(const std::string& stage);

struct ExperimentConfig {
  std::filesystem::path out = "runs/desk";

  text::LanguageParams language{};
  text::NoiseParams noise{};
  int n_train = 5000;
  int n_val = 500;
  int n_test = 500;
  int n_sentinels = 16;

  /// Shared architecture plus per-stage JSON overrides.
  model::ModelConfig model{};
  nlohmann::json model_overrides = nlohmann::json::object();
  /// Shared train settings plus per-stage JSON overrides.
  training::TrainConfig train{};
  nlohmann::json train_overrides = nlohmann::json::object();

  decode::DecodeOptions decode{};  // candidate generation; beam width follows a_pred
  int a_train = 20;
  int a_pred = 5;
  std::vector<int> a_pred_grid{5, 10, 15, 20};
  bool tune_a_pred = false;
  std::vector<double> lambda_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  double lambda = 1.0;  // used by rerank when no tuned value exists
  std::string tune_metric = "f05";
  std::uint64_t seed = 0;
  int ensemble_size = 1;
  int btr_train_sources = 0;  // 0 uses every training source
  int val_subset = 100;       // sources scored after each reranker epoch; 0 disables
  int pll_chunk = 0;
  int profile_min_len = 8;
  int profile_max_len = 12;
  bool parallel = true;

  /// Throws ConfigError with the offending field path.
  void validate() const;

  model::ModelConfig model_for(const std::string& stage, int vocab_size) const;
  training::TrainConfig train_for(const std::string& stage, int member = 0) const;
  /// Beam width needed for validation/test candidates.
  int candidate_beam() const;

  std::filesystem::path corpus_dir() const { return out / "corpus"; }
  std::filesystem::path checkpoint_dir() const { return out / "checkpoints"; }
  std::filesystem::path candidate_dir() const { return out / "candidates"; }
  std::filesystem::path decision_dir() const { return out / "decisions"; }
  std::filesystem::path report_dir() const { return out / "reports"; }
  std::filesystem::path profile_dir() const { return out / "profiles"; }
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing keys keep defaults; unknown top-level keys throw ConfigError.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace btr::pipeline
