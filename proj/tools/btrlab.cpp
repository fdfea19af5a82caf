#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "btr/common/error.hpp"
#include "btr/pipeline/pipeline.hpp"

namespace {

int exit_code(const btr::Error& e) {
  if (dynamic_cast<const btr::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const btr::DataError*>(&e) || dynamic_cast<const btr::ParseError*>(&e)) return 3;
  if (dynamic_cast<const btr::CheckpointError*>(&e)) return 4;
  return 1;
}

const char* error_name(const btr::Error& e) {
  if (dynamic_cast<const btr::ConfigError*>(&e)) return "config error";
  if (dynamic_cast<const btr::DataError*>(&e)) return "data error";
  if (dynamic_cast<const btr::ParseError*>(&e)) return "parse error";
  if (dynamic_cast<const btr::CheckpointError*>(&e)) return "checkpoint error";
  if (dynamic_cast<const btr::NumericError*>(&e)) return "numeric error";
  return "error";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reranking experiments for sequence-to-sequence correction"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<int> a_pred, a_train;
  std::optional<std::string> out;
  std::string reranker = "btr";
  std::vector<std::string> splits{"val", "test"};
  bool serial = false;

  app.add_option("--config", config_path, "JSON experiment config")->envname("BTRLAB_CONFIG");
  app.add_option("--seed", seed, "Root random seed")->envname("BTRLAB_SEED");
  app.add_option("--lambda", lambda, "Acceptance threshold for rerank")->envname("BTRLAB_LAMBDA");
  app.add_option("--a-pred", a_pred, "Candidates reranked per source")->envname("BTRLAB_A_PRED");
  app.add_option("--a-train", a_train, "Negative candidates per source when training the reranker")
      ->envname("BTRLAB_A_TRAIN");
  app.add_option("--out", out, "Run directory")->envname("BTRLAB_OUT");
  app.add_option("--reranker", reranker, "btr, encoder_only, r2l, r2l_only or classifier")
      ->envname("BTRLAB_RERANKER")
      ->check(CLI::IsMember({"btr", "encoder_only", "r2l", "r2l_only", "classifier"}));
  app.add_option("--split", splits, "Splits to rerank")->envname("BTRLAB_SPLIT")->check(CLI::IsMember({"val", "test"}));
  app.add_flag("--serial", serial, "Disable the parallel worker pool")->envname("BTRLAB_SERIAL");

  for (const auto& name : btr::pipeline::command_names()) app.add_subcommand(name);

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    btr::pipeline::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = btr::pipeline::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (a_pred) cfg.a_pred = *a_pred;
    if (a_train) cfg.a_train = *a_train;
    if (out) cfg.out = *out;
    if (serial) cfg.parallel = false;

    btr::pipeline::Pipeline pipeline(cfg, std::cerr);
    btr::pipeline::RunOptions opt;
    opt.lambda = lambda;
    opt.reranker = reranker;
    opt.splits = splits;
    pipeline.run(command, opt);
  } catch (const btr::Error& e) {
    std::cerr << "btrlab " << command << ": " << error_name(e) << ": " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "btrlab " << command << ": error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
