#include "btr/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <regex>

#include "btr/common/error.hpp"
#include "btr/common/parallel.hpp"
#include "btr/eval/metric.hpp"
#include "btr/model/transformer.hpp"
#include "btr/nn/checkpoint.hpp"
#include "btr/nn/ops.hpp"
#include "btr/rerank/rerank.hpp"
#include "btr/text/dataset_io.hpp"

namespace btr::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using training::SeqPair;

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"synth",   "train-base", "train-r2l", "train-btr",
                                              "train-classifier", "generate", "rerank",    "tune",
                                              "evaluate", "profile",    "compare-decoding"};
  return names;
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void require_file(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw DataError("missing input file '" + p.string() + "' (produced by `" + producer + "`)");
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << j.dump(2) << '\n';
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  for (const auto& l : lines) out << l << '\n';
}

struct Model {
  nn::ParamStore params;
  model::ModelConfig cfg;
};

Model load_model(const fs::path& p, const std::string& producer) {
  require_file(p, producer);
  auto ck = nn::load_checkpoint(p);
  Model m{std::move(ck.params), ck.meta.at("model").get<model::ModelConfig>()};
  model::check_params(m.params, m.cfg);
  return m;
}

std::vector<SeqPair> encode_pairs(const std::vector<text::TextPair>& pairs, const text::Vocabulary& v) {
  std::vector<SeqPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({v.encode(p.src), v.encode(p.tgt)});
  return out;
}

json epochs_json(const training::TrainResult& r) {
  json a = json::array();
  for (const auto& e : r.epochs) {
    json j{{"epoch", e.epoch}, {"loss", e.loss}};
    j["val_metric"] = e.val_metric ? json(*e.val_metric) : json(nullptr);
    a.push_back(std::move(j));
  }
  return a;
}

json epoch_times(const training::TrainResult& r) {
  json a = json::array();
  for (const auto& e : r.epochs) a.push_back(e.wall_time);
  return a;
}

std::vector<eval::Tokens> words_of(const text::Vocabulary& v, const std::vector<TokenSeq>& seqs) {
  std::vector<eval::Tokens> out;
  for (const auto& s : seqs) out.push_back(decode::words(v, s));
  return out;
}

std::vector<double> softmax(const std::vector<double>& s) {
  const double m = *std::max_element(s.begin(), s.end());
  std::vector<double> out(s.size());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) z += (out[i] = std::exp(s[i] - m));
  for (auto& v : out) v /= z;
  return out;
}

// Mean per-token cross-entropy of a causal model on held-out pairs.
double heldout_loss(const nn::ParamStore& ps, const model::ModelConfig& cfg, const std::vector<SeqPair>& pairs) {
  double total = 0.0;
  long tokens = 0;
  for (std::size_t b = 0; b < pairs.size(); b += 64) {
    std::vector<SeqPair> batch(pairs.begin() + static_cast<long>(b),
                               pairs.begin() + static_cast<long>(std::min(pairs.size(), b + 64)));
    long n = 0;
    for (const auto& p : batch) n += static_cast<long>(p.tgt.size()) + 1;
    nn::ParamBinder binder(ps);
    total += training::mle_loss(binder, cfg, batch).value()[0] * static_cast<double>(n);
    tokens += n;
  }
  return total / static_cast<double>(tokens);
}

json stats_json(const std::vector<decode::CandidateSet>& sets, const text::Vocabulary& v) {
  const auto em = decode::candidate_stats(sets, eval::exact_match_metric(), v);
  const auto f = decode::candidate_stats(sets, eval::f05_metric(), v);
  return {{"n", em.n},
          {"gold_pct", em.gold_pct},
          {"unique_pct", em.unique_pct},
          {"oracle_exact_match", em.oracle},
          {"top1_exact_match", em.top1},
          {"oracle_f05", f.oracle},
          {"top1_f05", f.top1}};
}

bool is_mle_kind(const std::string& k) { return k == "btr" || k == "encoder_only"; }

}  // namespace

Pipeline::Pipeline(ExperimentConfig cfg, std::ostream& log) : cfg_(std::move(cfg)), log_(log) { cfg_.validate(); }

std::string Pipeline::system_name(const std::string& kind) const {
  if (is_mle_kind(kind)) return kind + "-a" + std::to_string(cfg_.a_train);
  if (kind == "r2l" || kind == "r2l_only" || kind == "classifier") return kind;
  throw ConfigError("reranker: unknown kind '" + kind + "' (btr, encoder_only, r2l, r2l_only, classifier)");
}

namespace {

struct Context {
  const ExperimentConfig& cfg;
  std::ostream& log;

  text::Vocabulary vocab() const {
    const auto p = cfg.corpus_dir() / "vocab.json";
    require_file(p, "synth");
    return text::Vocabulary::load(p);
  }
  std::vector<text::TextPair> split(const std::string& name) const {
    const auto p = cfg.corpus_dir() / (name + ".jsonl");
    require_file(p, "synth");
    return text::load_pairs(p);
  }
  std::vector<decode::CandidateSet> candidates(const std::string& name, const text::Vocabulary& v) const {
    const auto p = cfg.candidate_dir() / (name + ".jsonl");
    require_file(p, "generate");
    return decode::load_candidates(p, v);
  }
  fs::path checkpoint(const std::string& system, int member = 0) const {
    std::string name = system;
    if (cfg.ensemble_size > 1) name += ".m" + std::to_string(member);
    return cfg.checkpoint_dir() / (name + ".ckpt");
  }
  void save_model(const fs::path& p, const nn::ParamStore& ps, const model::ModelConfig& mcfg,
                  const std::string& stage, const training::TrainConfig& tc) const {
    fs::create_directories(p.parent_path());
    nn::save_checkpoint(p, ps, {{"stage", stage}, {"model", mcfg}, {"train", tc}});
  }
  json finish(const std::string& name, json report, json timing) const {
    report["command"] = name;
    report["seed"] = cfg.seed;
    report["config"] = cfg;
    write_json(cfg.report_dir() / (name + ".json"), report);
    write_json(cfg.report_dir() / (name + ".timing.json"), timing);
    return report;
  }
  void epoch_log(const std::string& what, const training::EpochReport& e, int total) const {
    log << "[" << what << "] epoch " << e.epoch << "/" << total << " loss " << e.loss;
    if (e.val_metric) log << " val " << *e.val_metric;
    log << " (" << e.wall_time << "s)" << std::endl;
  }
  // Sources used to train the rerankers.
  std::vector<SeqPair> reranker_pairs(const text::Vocabulary& v) const {
    auto pairs = encode_pairs(split("train"), v);
    if (cfg.btr_train_sources > 0 && static_cast<std::size_t>(cfg.btr_train_sources) < pairs.size()) {
      pairs.resize(static_cast<std::size_t>(cfg.btr_train_sources));
    }
    return pairs;
  }
  std::vector<const nn::ParamStore*> pointers(const std::vector<Model>& ms) const {
    std::vector<const nn::ParamStore*> out;
    for (const auto& m : ms) out.push_back(&m.params);
    return out;
  }
  std::vector<Model> members(const std::string& system) const {
    std::vector<Model> out;
    for (int m = 0; m < cfg.ensemble_size; ++m) out.push_back(load_model(checkpoint(system, m), "train-btr"));
    return out;
  }
};

training::TrainResult train_causal(const Context& ctx, const std::string& stage, const std::string& what,
                                   json& report, json& timing) {
  const auto t0 = Clock::now();
  const auto v = ctx.vocab();
  const auto train = encode_pairs(ctx.split("train"), v);
  auto val = encode_pairs(ctx.split("val"), v);
  const auto mcfg = ctx.cfg.model_for(stage, v.size());
  const auto tc = ctx.cfg.train_for(stage);
  if (mcfg.role == model::Role::r2l)
    for (auto& p : val) p.tgt = training::reversed(p.tgt);
  const auto res = training::train_mle(mcfg, train, tc, [&](const nn::ParamStore& ps, int) -> std::optional<double> {
    return heldout_loss(ps, mcfg, val);
  });
  for (const auto& e : res.epochs) ctx.epoch_log(what, e, tc.epochs);
  ctx.save_model(ctx.checkpoint(stage, 0).replace_filename(stage + ".ckpt"), res.params, mcfg, stage, tc);
  report = {{"stage", stage},
            {"model", mcfg},
            {"train", tc},
            {"n_parameters", res.params.num_parameters()},
            {"initial_loss", res.initial_loss},
            {"epochs", epochs_json(res)},
            {"val_metric_name", "token_cross_entropy"}};
  timing = {{"epochs", epoch_times(res)}, {"total", since(t0)}};
  return res;
}

}  // namespace

json Pipeline::synth() {
  const auto t0 = Clock::now();
  Context ctx{cfg_, log_};
  const text::MarkovLanguage lang(cfg_.language);
  const auto vocab = lang.vocabulary(cfg_.n_sentinels);
  const Rng root(cfg_.seed);
  json counts;
  fs::create_directories(cfg_.corpus_dir());
  for (const auto& [name, n] : std::vector<std::pair<std::string, int>>{
           {"train", cfg_.n_train}, {"val", cfg_.n_val}, {"test", cfg_.n_test}}) {
    const auto pairs = text::synth_gec_corpus(n, cfg_.language, cfg_.noise, root.split("corpus").split(name));
    text::save_pairs(cfg_.corpus_dir() / (name + ".jsonl"), pairs);
    long clean = 0;
    for (const auto& p : pairs) clean += p.src == p.tgt;
    counts[name] = {{"pairs", n}, {"clean", clean}};
  }
  vocab.save(cfg_.corpus_dir() / "vocab.json");
  log_ << "[synth] wrote " << cfg_.n_train << "/" << cfg_.n_val << "/" << cfg_.n_test << " pairs, vocabulary "
       << vocab.size() << std::endl;
  return ctx.finish("synth", {{"splits", counts}, {"vocab_size", vocab.size()}}, {{"total", since(t0)}});
}

json Pipeline::train_base() {
  Context ctx{cfg_, log_};
  json report, timing;
  train_causal(ctx, "base", "train-base", report, timing);
  return ctx.finish("train-base", report, timing);
}

json Pipeline::train_r2l() {
  Context ctx{cfg_, log_};
  json report, timing;
  train_causal(ctx, "r2l", "train-r2l", report, timing);
  return ctx.finish("train-r2l", report, timing);
}

json Pipeline::train_reranker(const std::string& kind) {
  if (!is_mle_kind(kind)) throw ConfigError("train-btr: reranker must be btr or encoder_only, got '" + kind + "'");
  const auto t0 = Clock::now();
  Context ctx{cfg_, log_};
  const auto v = ctx.vocab();
  const auto mcfg = cfg_.model_for(kind, v.size());
  const std::string system = system_name(kind);

  std::vector<decode::CandidateSet> sets;
  if (cfg_.a_train > 0) {
    sets = ctx.candidates("train", v);
  } else {
    for (const auto& p : ctx.reranker_pairs(v)) {
      decode::CandidateSet s;
      s.source = p.src;
      s.gold = p.tgt;
      sets.push_back(std::move(s));
    }
  }
  std::optional<nn::ParamStore> warm;
  if (kind == "btr") warm = load_model(cfg_.checkpoint_dir() / "base.ckpt", "train-base").params;

  std::vector<decode::CandidateSet> val;
  const auto val_path = cfg_.candidate_dir() / "val.jsonl";
  if (cfg_.val_subset > 0 && fs::exists(val_path)) {
    val = decode::load_candidates(val_path, v);
    if (val.size() > static_cast<std::size_t>(cfg_.val_subset)) val.resize(static_cast<std::size_t>(cfg_.val_subset));
  }
  const auto metric = eval::metric_by_name(cfg_.tune_metric);
  auto val_score = [&](const nn::ParamStore& ps, int) -> std::optional<double> {
    if (val.empty()) return std::nullopt;
    const auto scored = rerank::score_sets({&ps}, mcfg, val, cfg_.a_pred, cfg_.pll_chunk, cfg_.parallel);
    std::vector<TokenSeq> srcs, hyps, golds;
    for (std::size_t i = 0; i < val.size(); ++i) {
      srcs.push_back(val[i].source);
      hyps.push_back(rerank::decide(scored[i], 0.0).chosen);
      golds.push_back(*val[i].gold);
    }
    return metric.corpus(words_of(v, srcs), words_of(v, hyps), words_of(v, golds));
  };

  json members = json::array(), times = json::array();
  for (int m = 0; m < cfg_.ensemble_size; ++m) {
    auto tc = cfg_.train_for(kind, m);
    tc.a_train = cfg_.a_train;
    const auto res = training::train_btr(mcfg, sets, v, tc, warm, val_score);
    for (const auto& e : res.epochs) ctx.epoch_log("train-btr " + system, e, tc.epochs);
    ctx.save_model(ctx.checkpoint(system, m), res.params, mcfg, kind, tc);
    members.push_back({{"member", m}, {"train", tc}, {"initial_loss", res.initial_loss}, {"epochs", epochs_json(res)}});
    times.push_back(epoch_times(res));
  }
  return ctx.finish("train-" + system,
                    {{"system", system},
                     {"model", mcfg},
                     {"a_train", cfg_.a_train},
                     {"warm_start", warm.has_value()},
                     {"n_sources", sets.size()},
                     {"val_metric_name", cfg_.tune_metric + " at lambda 0 on " + std::to_string(val.size()) +
                                             " validation sources"},
                     {"members", members}},
                    {{"epochs", times}, {"total", since(t0)}});
}

json Pipeline::train_classifier() {
  const auto t0 = Clock::now();
  Context ctx{cfg_, log_};
  const auto v = ctx.vocab();
  const auto data = training::classifier_data(encode_pairs(ctx.split("train"), v));
  const auto val = training::classifier_data(encode_pairs(ctx.split("val"), v));
  const auto mcfg = cfg_.model_for("classifier", v.size());
  const auto tc = cfg_.train_for("classifier");
  const auto res = training::train_classifier(mcfg, data, tc, [&](const nn::ParamStore& ps, int) -> std::optional<double> {
    std::vector<TokenSeq> seqs;
    for (const auto& l : val) seqs.push_back(model::classifier_input(l.seq));
    const auto p = model::classify_batch(ps, mcfg, seqs);
    long correct = 0;
    for (std::size_t i = 0; i < val.size(); ++i) correct += (p[i] > 0.5) == (val[i].label == 1);
    return static_cast<double>(correct) / static_cast<double>(val.size());
  });
  for (const auto& e : res.epochs) ctx.epoch_log("train-classifier", e, tc.epochs);
  ctx.save_model(cfg_.checkpoint_dir() / "classifier.ckpt", res.params, mcfg, "classifier", tc);
  return ctx.finish("train-classifier",
                    {{"model", mcfg},
                     {"train", tc},
                     {"n_examples", data.size()},
                     {"initial_loss", res.initial_loss},
                     {"epochs", epochs_json(res)},
                     {"val_metric_name", "accuracy"}},
                    {{"epochs", epoch_times(res)}, {"total", since(t0)}});
}

json Pipeline::generate() {
  const auto t0 = Clock::now();
  Context ctx{cfg_, log_};
  const auto v = ctx.vocab();
  const auto base = load_model(cfg_.checkpoint_dir() / "base.ckpt", "train-base");
  json report, timing;
  auto run_split = [&](const std::string& name, const std::vector<SeqPair>& pairs, decode::DecodeOptions o) {
    const auto ts = Clock::now();
    std::vector<TokenSeq> srcs;
    for (const auto& p : pairs) srcs.push_back(p.src);
    auto sets = decode::generate(base.params, base.cfg, v, srcs, o, Rng(cfg_.seed).split("generate").split(name),
                                 cfg_.parallel);
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      sets[i].gold = pairs[i].tgt;
      lines.push_back(v.decode(sets[i].y_base()));
    }
    decode::save_candidates(cfg_.candidate_dir() / (name + ".jsonl"), sets, v);
    if (name != "train") write_lines(cfg_.out / "outputs" / (name + "-base.txt"), lines);
    report["splits"][name] = {{"decode", o}, {"stats", stats_json(sets, v)}};
    timing[name] = since(ts);
    log_ << "[generate] " << name << ": " << sets.size() << " sources, beam " << o.beam << std::endl;
  };
  decode::DecodeOptions o = cfg_.decode;
  o.beam = cfg_.candidate_beam();
  o.n_samples = o.beam;
  for (const std::string name : {"val", "test"}) run_split(name, encode_pairs(ctx.split(name), v), o);
  if (cfg_.a_train > 0) {
    decode::DecodeOptions t = cfg_.decode;
    t.method = "beam";
    t.beam = cfg_.a_train;
    run_split("train", ctx.reranker_pairs(v), t);
  }
  timing["total"] = since(t0);
  return ctx.finish("generate", report, timing);
}

json Pipeline::rerank(const std::string& kind, std::optional<double> lambda, const std::vector<std::string>& splits) {
  const auto t0 = Clock::now();
  Context ctx{cfg_, log_};
  const auto v = ctx.vocab();
  const std::string system = system_name(kind);
  int a_pred = cfg_.a_pred;
  std::string lambda_source = "explicit";
  if (is_mle_kind(kind) && !lambda) {
    const auto tuned = cfg_.report_dir() / ("tune-" + system + ".json");
    if (fs::exists(tuned)) {
      std::ifstream in(tuned);
      const json t = json::parse(in);
      lambda = t.at("best").at("lambda").get<double>();
      a_pred = t.at("best").at("a_pred").get<int>();
      lambda_source = "tuned";
    } else {
      lambda = cfg_.lambda;
      lambda_source = "config";
    }
  }
  if (!is_mle_kind(kind)) lambda = 0.0;
  if (*lambda < 0.0) throw ConfigError("lambda: must be non-negative");

  std::vector<Model> members;
  std::optional<Model> l2r, r2l, clf;
  if (is_mle_kind(kind)) members = ctx.members(system);
  if (kind == "r2l" || kind == "r2l_only") {
    l2r = load_model(cfg_.checkpoint_dir() / "base.ckpt", "train-base");
    r2l = load_model(cfg_.checkpoint_dir() / "r2l.ckpt", "train-r2l");
  }
  if (kind == "classifier") clf = load_model(cfg_.checkpoint_dir() / "classifier.ckpt", "train-classifier");

  json report{{"system", system}, {"lambda", *lambda}, {"lambda_source", lambda_source}, {"a_pred", a_pred}};
  json timing;
  for (const auto& split : splits) {
    const auto ts = Clock::now();
    const auto sets = ctx.candidates(split, v);
    std::vector<rerank::RerankDecision> ds(sets.size());
    if (is_mle_kind(kind)) {
      const auto scored = rerank::score_sets(ctx.pointers(members), members.front().cfg, sets, a_pred,
                                             cfg_.pll_chunk, cfg_.parallel);
      for (std::size_t i = 0; i < sets.size(); ++i) ds[i] = rerank::decide(scored[i], *lambda);
    } else {
      parallel_for(static_cast<long>(sets.size()), cfg_.parallel, [&](long li) {
        const auto i = static_cast<std::size_t>(li);
        const auto c = clf ? rerank::rerank_classifier(clf->params, clf->cfg, sets[i], a_pred)
                           : rerank::rerank_r2l(l2r->params, l2r->cfg, r2l->params, r2l->cfg, sets[i],
                                                kind == "r2l", a_pred);
        auto& d = ds[i];
        for (int r = 0; r < static_cast<int>(c.scores.size()); ++r) d.candidates.push_back(sets[i].candidates[r].text);
        d.f = softmax(c.scores);
        d.y_base = sets[i].y_base();
        d.y_btr = c.chosen;
        d.chosen = c.chosen;
        d.verdict = c.chosen == d.y_base ? eval::Verdict::equal : eval::Verdict::accept;
        d.lambda = 0.0;
      });
    }
    std::vector<TokenSeq> srcs, chosen, base, golds;
    std::vector<std::string> lines;
    std::map<std::string, long> verdicts{{"Accept", 0}, {"Reject", 0}, {"Equal", 0}};
    for (std::size_t i = 0; i < sets.size(); ++i) {
      srcs.push_back(sets[i].source);
      chosen.push_back(ds[i].chosen);
      base.push_back(ds[i].y_base);
      if (sets[i].gold) golds.push_back(*sets[i].gold);
      lines.push_back(v.decode(ds[i].chosen));
      ++verdicts[eval::to_string(ds[i].verdict)];
    }
    rerank::save_decisions(cfg_.decision_dir() / (split + "-" + system + ".jsonl"), ds, srcs, v);
    write_lines(cfg_.out / "outputs" / (split + "-" + system + ".txt"), lines);
    json sj{{"verdicts", verdicts}};
    if (golds.size() == sets.size()) {
      sj["reranked"] = eval::evaluate(words_of(v, srcs), words_of(v, chosen), words_of(v, golds));
      sj["base"] = eval::evaluate(words_of(v, srcs), words_of(v, base), words_of(v, golds));
    }
    report["splits"][split] = sj;
    timing[split] = since(ts);
    log_ << "[rerank " << system << "] " << split << ": accept " << verdicts["Accept"] << ", reject "
         << verdicts["Reject"] << ", equal " << verdicts["Equal"] << " (lambda " << *lambda << ")" << std::endl;
  }
  timing["total"] = since(t0);
  return ctx.finish("rerank-" + system, report, timing);
}

json Pipeline::tune(const std::string& kind) {
  if (!is_mle_kind(kind)) throw ConfigError("tune: reranker must be btr or encoder_only, got '" + kind + "'");
  const auto t0 = Clock::now();
  Context ctx{cfg_, log_};
  const auto v = ctx.vocab();
  const std::string system = system_name(kind);
  const auto members = ctx.members(system);
  const auto sets = ctx.candidates("val", v);
  const auto metric = eval::metric_by_name(cfg_.tune_metric);
  std::vector<TokenSeq> srcs, golds, base;
  for (const auto& s : sets) {
    if (!s.gold) throw DataError("tune: validation candidates need gold targets");
    srcs.push_back(s.source);
    golds.push_back(*s.gold);
    base.push_back(s.y_base());
  }
  const auto src_w = words_of(v, srcs), gold_w = words_of(v, golds);
  const double base_metric = metric.corpus(src_w, words_of(v, base), gold_w);

  const std::vector<int> grid = cfg_.tune_a_pred ? cfg_.a_pred_grid : std::vector<int>{cfg_.a_pred};
  json rows = json::array();
  double best_metric = -1.0, best_lambda = 1.0;
  int best_a = cfg_.a_pred;
  for (int a : grid) {
    const auto scored = rerank::score_sets(ctx.pointers(members), members.front().cfg, sets, a, cfg_.pll_chunk,
                                           cfg_.parallel);
    for (double lambda : cfg_.lambda_grid) {
      std::vector<TokenSeq> hyps;
      long accepted = 0;
      for (const auto& s : scored) {
        const auto d = rerank::decide(s, lambda);
        accepted += d.verdict == eval::Verdict::accept;
        hyps.push_back(d.chosen);
      }
      const double m = metric.corpus(src_w, words_of(v, hyps), gold_w);
      rows.push_back({{"a_pred", a}, {"lambda", lambda}, {"metric", m}, {"accepted", accepted}});
      // Ties prefer the larger lambda, then the smaller a_pred.
      const bool better = m > best_metric || (m == best_metric && (lambda > best_lambda ||
                                                                   (lambda == best_lambda && a < best_a)));
      if (better) {
        best_metric = m;
        best_lambda = lambda;
        best_a = a;
      }
    }
  }
  log_ << "[tune " << system << "] base " << base_metric << ", best " << best_metric << " at lambda " << best_lambda
       << ", a_pred " << best_a << std::endl;
  return ctx.finish("tune-" + system,
                    {{"system", system},
                     {"metric", cfg_.tune_metric},
                     {"base_metric", base_metric},
                     {"best", {{"lambda", best_lambda}, {"a_pred", best_a}, {"metric", best_metric}}},
                     {"grid", rows}},
                    {{"total", since(t0)}});
}

json Pipeline::evaluate() {
  const auto t0 = Clock::now();
  Context ctx{cfg_, log_};
  const auto v = ctx.vocab();
  const auto sets = ctx.candidates("test", v);
  std::vector<TokenSeq> srcs, golds, base;
  for (const auto& s : sets) {
    if (!s.gold) throw DataError("evaluate: test candidates need gold targets");
    srcs.push_back(s.source);
    golds.push_back(*s.gold);
    base.push_back(s.y_base());
  }
  const auto src_w = words_of(v, srcs), gold_w = words_of(v, golds), base_w = words_of(v, base);
  const auto base_report = eval::evaluate(src_w, base_w, gold_w);
  json report{{"base", base_report}, {"systems", json::object()}};

  std::vector<fs::path> files;
  if (fs::exists(cfg_.decision_dir()))
    for (const auto& e : fs::directory_iterator(cfg_.decision_dir())) {
      const auto name = e.path().filename().string();
      if (name.rfind("test-", 0) == 0 && e.path().extension() == ".jsonl") files.push_back(e.path());
    }
  std::sort(files.begin(), files.end());
  const auto metric = eval::metric_by_name(cfg_.tune_metric);
  for (const auto& f : files) {
    const std::string system = f.stem().string().substr(5);
    std::vector<TokenSeq> dsrcs;
    const auto ds = rerank::load_decisions(f, v, &dsrcs);
    if (dsrcs != srcs) throw DataError("evaluate: '" + f.string() + "' does not match the test candidates");
    std::vector<TokenSeq> chosen;
    std::vector<eval::VerdictRecord> records;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      chosen.push_back(ds[i].chosen);
      records.push_back({ds[i].verdict, src_w[i], decode::words(v, ds[i].y_base), decode::words(v, ds[i].y_btr),
                         gold_w[i]});
    }
    const auto r = eval::evaluate(src_w, words_of(v, chosen), gold_w);
    json sj{{"report", r},
            {"lambda", ds.empty() ? 0.0 : ds.front().lambda},
            {"delta",
             {{"precision", r.precision - base_report.precision},
              {"recall", r.recall - base_report.recall},
              {"f05", r.f05 - base_report.f05},
              {"gleu", r.gleu - base_report.gleu},
              {"exact_match", r.exact_match - base_report.exact_match}}},
            {"breakdown", eval::verdict_breakdown(records, metric)}};
    report["systems"][system] = sj;
    log_ << "[evaluate] " << system << ": f05 " << r.f05 << " (base " << base_report.f05 << "), exact match "
         << r.exact_match << " (base " << base_report.exact_match << ")" << std::endl;
  }
  return ctx.finish("evaluate", report, {{"total", since(t0)}});
}

json Pipeline::profile() {
  const auto t0 = Clock::now();
  Context ctx{cfg_, log_};
  const auto v = ctx.vocab();
  std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
  for (const auto& p : encode_pairs(ctx.split("test"), v)) pairs.emplace_back(p.src, p.tgt);

  // Rerankers present on disk, e.g. btr-a0, btr-a20, encoder_only-a20.
  std::vector<std::string> systems;
  const std::regex ckpt_re(R"(^((btr|encoder_only)-a\d+)(\.m\d+)?\.ckpt$)");
  if (fs::exists(cfg_.checkpoint_dir()))
    for (const auto& e : fs::directory_iterator(cfg_.checkpoint_dir())) {
      std::smatch m;
      const auto name = e.path().filename().string();
      if (std::regex_match(name, m, ckpt_re) && std::find(systems.begin(), systems.end(), m[1].str()) == systems.end())
        systems.push_back(m[1].str());
    }
  std::sort(systems.begin(), systems.end());

  json report{{"length_bucket", {cfg_.profile_min_len, cfg_.profile_max_len}}};
  auto emit_position = [&](const std::string& name, const rerank::PositionScorer& scorer) {
    const auto prof = rerank::position_loss_profile(scorer, pairs, cfg_.profile_min_len, cfg_.profile_max_len);
    rerank::write_profile_csv(cfg_.profile_dir() / ("position-" + name + ".csv"), "mean_ce", prof.mean_ce, prof.count);
    report["position"][name] = {{"mean_ce", prof.mean_ce}, {"count", prof.count}};
  };
  const auto base = load_model(cfg_.checkpoint_dir() / "base.ckpt", "train-base");
  emit_position("base", rerank::causal_positions(base.params, base.cfg));
  std::optional<Model> r2l;
  if (fs::exists(cfg_.checkpoint_dir() / "r2l.ckpt")) {
    r2l = load_model(cfg_.checkpoint_dir() / "r2l.ckpt", "train-r2l");
    emit_position("r2l", rerank::r2l_summed_positions(base.params, base.cfg, r2l->params, r2l->cfg));
  }

  const auto sets = ctx.candidates("test", v);
  for (const auto& system : systems) {
    std::vector<Model> members;
    for (int m = 0; m < cfg_.ensemble_size; ++m) {
      const auto p = ctx.checkpoint(system, m);
      if (fs::exists(p)) members.push_back(load_model(p, "train-btr"));
    }
    if (members.empty()) continue;
    emit_position(system, rerank::masked_positions(members.front().params, members.front().cfg, cfg_.pll_chunk));
    const auto scored = rerank::score_sets(ctx.pointers(members), members.front().cfg, sets, cfg_.a_pred,
                                           cfg_.pll_chunk, cfg_.parallel);
    std::vector<rerank::RerankDecision> ds;
    long skipped = 0;
    for (const auto& s : scored) {
      if (static_cast<int>(s.f.size()) == cfg_.a_pred) {
        ds.push_back(rerank::decide(s, 1.0));
      } else {
        ++skipped;
      }
    }
    const auto rp = rerank::rank_probability_profile(ds, cfg_.a_pred);
    rerank::write_profile_csv(cfg_.profile_dir() / ("rank-" + system + ".csv"), "mean_f", rp);
    report["rank"][system] = {{"mean_f", rp}, {"n", ds.size()}, {"skipped", skipped}};
    log_ << "[profile] " << system << ": mean f at rank 1 = " << rp.front() << std::endl;
  }
  return ctx.finish("profile", report, {{"total", since(t0)}});
}

json Pipeline::compare_decoding() {
  const auto t0 = Clock::now();
  Context ctx{cfg_, log_};
  const auto v = ctx.vocab();
  const auto base = load_model(cfg_.checkpoint_dir() / "base.ckpt", "train-base");
  const auto pairs = encode_pairs(ctx.split("val"), v);
  std::vector<TokenSeq> srcs;
  for (const auto& p : pairs) srcs.push_back(p.src);
  const int a = cfg_.a_pred;
  json rows = json::object(), timing;
  for (const std::string method : {"beam", "diverse", "top_k", "nucleus"}) {
    const auto ts = Clock::now();
    decode::DecodeOptions o = cfg_.decode;
    o.method = method;
    o.beam = a;
    o.n_samples = a;
    if (a % o.groups != 0) o.groups = a;
    auto sets = decode::generate(base.params, base.cfg, v, srcs, o,
                                 Rng(cfg_.seed).split("compare-decoding").split(method), cfg_.parallel);
    for (std::size_t i = 0; i < sets.size(); ++i) sets[i].gold = pairs[i].tgt;
    rows[method] = {{"decode", o}, {"stats", stats_json(sets, v)}};
    timing[method] = since(ts);
    const auto& st = rows[method]["stats"];
    log_ << "[compare-decoding] " << method << ": gold " << st["gold_pct"].get<double>() << "%, unique "
         << st["unique_pct"].get<double>() << "%, oracle " << st["oracle_exact_match"].get<double>() << ", top-1 "
         << st["top1_exact_match"].get<double>() << std::endl;
  }
  timing["total"] = since(t0);
  return ctx.finish("compare-decoding", {{"a", a}, {"split", "val"}, {"methods", rows}}, timing);
}

json Pipeline::run(const std::string& command, const RunOptions& opt) {
  if (command == "synth") return synth();
  if (command == "train-base") return train_base();
  if (command == "train-r2l") return train_r2l();
  if (command == "train-btr") return train_reranker(opt.reranker);
  if (command == "train-classifier") return train_classifier();
  if (command == "generate") return generate();
  if (command == "rerank") return rerank(opt.reranker, opt.lambda, opt.splits);
  if (command == "tune") return tune(opt.reranker);
  if (command == "evaluate") return evaluate();
  if (command == "profile") return profile();
  if (command == "compare-decoding") return compare_decoding();
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace btr::pipeline
