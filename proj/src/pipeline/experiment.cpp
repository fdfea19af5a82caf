#include "btr/pipeline/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "btr/common/error.hpp"
#include "btr/common/rng.hpp"
#include "btr/eval/metric.hpp"

namespace btr::pipeline {

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"base", "r2l", "btr", "encoder_only", "classifier"};
  return names;
}

model::Role stage_role(const std::string& stage) {
  if (stage == "base") return model::Role::base_l2r;
  if (stage == "r2l") return model::Role::r2l;
  if (stage == "btr") return model::Role::btr;
  if (stage == "encoder_only" || stage == "classifier") return model::Role::encoder_only;
  throw ConfigError("unknown training stage '" + stage + "'");
}

namespace {

void check_overrides(const nlohmann::json& o, const std::string& field) {
  if (!o.is_object()) throw ConfigError(field + ": must be an object keyed by stage");
  for (const auto& [stage, patch] : o.items()) {
    const auto& names = stage_names();
    if (std::find(names.begin(), names.end(), stage) == names.end()) {
      throw ConfigError(field + "." + stage + ": unknown stage");
    }
    if (!patch.is_object()) throw ConfigError(field + "." + stage + ": must be an object");
  }
}

template <class T>
T patched(const T& shared, const nlohmann::json& overrides, const std::string& stage) {
  nlohmann::json j = shared;
  if (overrides.contains(stage)) j.merge_patch(overrides.at(stage));
  return j.get<T>();
}

}  // namespace

model::ModelConfig ExperimentConfig::model_for(const std::string& stage, int vocab_size) const {
  model::ModelConfig m = patched(model, model_overrides, stage);
  m.vocab_size = vocab_size;
  return m.with_role(stage_role(stage));
}

training::TrainConfig ExperimentConfig::train_for(const std::string& stage, int member) const {
  training::TrainConfig t = patched(train, train_overrides, stage);
  t.seed = Rng(seed).split(stage).split(static_cast<std::uint64_t>(member)).next_u64();
  return t;
}

int ExperimentConfig::candidate_beam() const {
  int b = a_pred;
  if (tune_a_pred)
    for (int a : a_pred_grid) b = std::max(b, a);
  return b;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  if (n_train < 1) fail("n_train", "must be positive");
  if (n_val < 1) fail("n_val", "must be positive");
  if (n_test < 1) fail("n_test", "must be positive");
  if (n_sentinels < 1) fail("n_sentinels", "must be positive");
  if (a_pred < 1) fail("a_pred", "must be at least 1");
  if (a_train < 0) fail("a_train", "must be non-negative");
  for (std::size_t i = 0; i < a_pred_grid.size(); ++i)
    if (a_pred_grid[i] < 1) fail("a_pred_grid[" + std::to_string(i) + "]", "must be at least 1");
  if (lambda_grid.empty()) fail("lambda_grid", "must not be empty");
  bool has_one = false;
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    const double l = lambda_grid[i];
    if (!(l >= 0.0 && l <= 1.0)) fail("lambda_grid[" + std::to_string(i) + "]", "must lie in [0, 1]");
    has_one = has_one || l == 1.0;
  }
  if (!has_one) fail("lambda_grid", "must contain 1.0 so the base system stays reachable");
  if (!(lambda >= 0.0)) fail("lambda", "must be non-negative");
  if (ensemble_size < 1) fail("ensemble_size", "must be at least 1");
  if (btr_train_sources < 0) fail("btr_train_sources", "must be non-negative");
  if (val_subset < 0) fail("val_subset", "must be non-negative");
  if (pll_chunk < 0) fail("pll_chunk", "must be non-negative");
  if (profile_min_len < 1 || profile_max_len < profile_min_len) fail("profile_max_len", "bucket must be non-empty");
  try {
    eval::metric_by_name(tune_metric);
  } catch (const Error& e) {
    fail("tune_metric", e.what());
  }
  check_overrides(model_overrides, "model_overrides");
  check_overrides(train_overrides, "train_overrides");
  for (const auto& stage : stage_names()) {
    try {
      model_for(stage, 1000).validate();
    } catch (const Error& e) {
      fail("model (stage " + stage + ")", e.what());
    }
    try {
      train_for(stage).validate();
    } catch (const Error& e) {
      fail("train (stage " + stage + ")", e.what());
    }
  }
  const auto& d = decode;
  if (d.method != "beam" && d.method != "diverse" && d.method != "top_k" && d.method != "nucleus") {
    fail("decode.method", "must be one of beam, diverse, top_k, nucleus");
  }
  if (d.max_len < 1) fail("decode.max_len", "must be positive");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"out", c.out.generic_string()},
       {"language", c.language},
       {"noise", c.noise},
       {"n_train", c.n_train},
       {"n_val", c.n_val},
       {"n_test", c.n_test},
       {"n_sentinels", c.n_sentinels},
       {"model", c.model},
       {"model_overrides", c.model_overrides},
       {"train", c.train},
       {"train_overrides", c.train_overrides},
       {"decode", c.decode},
       {"a_train", c.a_train},
       {"a_pred", c.a_pred},
       {"a_pred_grid", c.a_pred_grid},
       {"tune_a_pred", c.tune_a_pred},
       {"lambda_grid", c.lambda_grid},
       {"lambda", c.lambda},
       {"tune_metric", c.tune_metric},
       {"seed", c.seed},
       {"ensemble_size", c.ensemble_size},
       {"btr_train_sources", c.btr_train_sources},
       {"val_subset", c.val_subset},
       {"pll_chunk", c.pll_chunk},
       {"profile_min_len", c.profile_min_len},
       {"profile_max_len", c.profile_max_len},
       {"parallel", c.parallel}};
  j["model"].erase("vocab_size");
  j["model"].erase("role");
  j["model"].erase("decoder_mask_mode");
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json known = ExperimentConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError(key + ": unknown configuration key");
  }
  try {
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("language")) c.language = j.at("language").get<text::LanguageParams>();
    if (j.contains("noise")) c.noise = j.at("noise").get<text::NoiseParams>();
    c.n_train = j.value("n_train", c.n_train);
    c.n_val = j.value("n_val", c.n_val);
    c.n_test = j.value("n_test", c.n_test);
    c.n_sentinels = j.value("n_sentinels", c.n_sentinels);
    if (j.contains("model")) {
      nlohmann::json m = c.model;
      m.merge_patch(j.at("model"));
      c.model = m.get<model::ModelConfig>();
    }
    c.model_overrides = j.value("model_overrides", c.model_overrides);
    if (j.contains("train")) {
      nlohmann::json t = c.train;
      t.merge_patch(j.at("train"));
      c.train = t.get<training::TrainConfig>();
    }
    c.train_overrides = j.value("train_overrides", c.train_overrides);
    if (j.contains("decode")) c.decode = j.at("decode").get<decode::DecodeOptions>();
    c.a_train = j.value("a_train", c.a_train);
    c.a_pred = j.value("a_pred", c.a_pred);
    c.a_pred_grid = j.value("a_pred_grid", c.a_pred_grid);
    c.tune_a_pred = j.value("tune_a_pred", c.tune_a_pred);
    c.lambda_grid = j.value("lambda_grid", c.lambda_grid);
    c.lambda = j.value("lambda", c.lambda);
    c.tune_metric = j.value("tune_metric", c.tune_metric);
    c.seed = j.value("seed", c.seed);
    c.ensemble_size = j.value("ensemble_size", c.ensemble_size);
    c.btr_train_sources = j.value("btr_train_sources", c.btr_train_sources);
    c.val_subset = j.value("val_subset", c.val_subset);
    c.pll_chunk = j.value("pll_chunk", c.pll_chunk);
    c.profile_min_len = j.value("profile_min_len", c.profile_min_len);
    c.profile_max_len = j.value("profile_max_len", c.profile_max_len);
    c.parallel = j.value("parallel", c.parallel);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config file '" + path.string() + "' not found");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
  return j.get<ExperimentConfig>();
}

}  // namespace btr::pipeline
