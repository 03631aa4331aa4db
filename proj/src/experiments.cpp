#include "mocha/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "mocha/errors.hpp"
#include "mocha/manifest.hpp"

namespace mocha {

namespace {

std::string hash_dataset(const SceneDataset& ds) {
  std::ostringstream out;
  ds.save(out);
  return git_blob_hash(out.str());
}

std::string algorithm_name(Algorithm a) { return a == Algorithm::Ppo ? "ppo" : "scst"; }

}  // namespace

namespace {

Workspace assemble(const RunConfig& config, SceneDataset dataset) {
  Vocabulary vocab = dataset.vocabulary();
  WorldLexicon lexicon = dataset.lexicon();
  std::string hash = hash_dataset(dataset);
  return Workspace{config, std::move(dataset), std::move(vocab), std::move(lexicon), std::move(hash)};
}

}  // namespace

Workspace Workspace::build(const RunConfig& config) { return assemble(config, build_world(config.world)); }

Workspace Workspace::from_file(const RunConfig& config, const std::filesystem::path& dataset_path) {
  std::ifstream in(dataset_path);
  if (!in) throw ConfigError("cannot open dataset " + dataset_path.string());
  SceneDataset ds = SceneDataset::load(in);
  if (!(ds.spec == config.world)) {
    throw ConfigError("dataset " + dataset_path.string() + " was built from a different [world] section or seed");
  }
  return assemble(config, std::move(ds));
}

PolicyShape policy_shape(const RunConfig& config, const Vocabulary& vocab) {
  PolicyShape s = default_policy_shape(vocab, config.world.feature_dim);
  s.token_dim = config.policy.token_dim;
  s.hidden = config.policy.hidden;
  s.context = config.policy.context;
  return s;
}

PolicyParams pretrain(const Workspace& ws, MleResult* result) {
  Rng rng(module_seed(ws.config.seed, "policy-init"));
  PolicyParams params = PolicyParams::random(policy_shape(ws.config, ws.vocab), rng);
  MleResult r = mle_train(params, ws.dataset, ws.vocab, ws.config.mle);
  if (result != nullptr) *result = std::move(r);
  return params;
}

RewardScorers::RewardScorers(const RunConfig& config) {
  if (config.scorer == ScorerKind::Oracle) {
    fidelity_ = std::make_unique<OracleContradictionScorer>();
    adequacy_ = std::make_unique<OracleSimilarityScorer>();
  } else {
    fidelity_ = std::make_unique<RemoteScorer>(make_http_transport(config.fidelity_endpoint));
    adequacy_ = std::make_unique<RemoteScorer>(make_http_transport(config.adequacy_endpoint));
  }
}

RewardSetup RewardScorers::setup(const RewardConfig& weights) const {
  return RewardSetup{weights, fidelity_.get(), adequacy_.get()};
}

RunVariant full_variant(const RunConfig& config) {
  return RunVariant{"full", config.reward, config.rl.algorithm, config.rl.seed};
}

const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names{"no_rf", "no_ra", "no_kl", "scst"};
  return names;
}

RunVariant ablation_variant(const RunConfig& config, const std::string& which) {
  RunVariant v = full_variant(config);
  v.name = which;
  if (which == "no_rf") {
    v.reward.alpha = 0.0;
  } else if (which == "no_ra") {
    v.reward.alpha = 1.0;
  } else if (which == "no_kl") {
    v.reward.beta = 0.0;
  } else if (which == "scst") {
    v.algorithm = Algorithm::Scst;
  } else {
    throw ConfigError("unknown ablation '" + which + "' (expected no_rf, no_ra, no_kl or scst)");
  }
  return v;
}

namespace {

RlConfig rl_config_for(const RunConfig& config, const RunVariant& variant) {
  RlConfig rc = config.rl;
  rc.algorithm = variant.algorithm;
  rc.seed = variant.rl_seed;
  return rc;
}

}  // namespace

MochaRun run_mocha(const Workspace& ws, const PolicyParams& init, const RunVariant& variant,
                   const RewardScorers& scorers, const TrainHooks& hooks) {
  const RlConfig rc = rl_config_for(ws.config, variant);
  MochaRun run{TrainState::start(init, rc), {}};
  run.log = train(run.state, ws.dataset, ws.vocab, scorers.setup(variant.reward), rc, hooks);
  return run;
}

std::vector<IterationLog> resume_mocha(const Workspace& ws, TrainState& state, const RunVariant& variant,
                                       const RewardScorers& scorers, const TrainHooks& hooks) {
  const RlConfig rc = rl_config_for(ws.config, variant);
  return train(state, ws.dataset, ws.vocab, scorers.setup(variant.reward), rc, hooks);
}

double final_base_reward(const std::vector<IterationLog>& log, std::size_t tail) {
  if (log.empty()) return 0.0;
  const std::size_t n = std::min(tail == 0 ? log.size() : tail, log.size());
  double sum = 0.0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) sum += log[i].mean_base;
  return sum / static_cast<double>(n);
}

EvalTools EvalTools::load(const RunConfig& config) {
  EvalTools t;
  t.concreteness = ConcretenessLexicon::load_file(config.eval.concreteness.string());
  t.synonyms = ChairSynonymMap::load_file(config.eval.synonyms.string());
  if (config.eval.judge == JudgeKind::Lexical) {
    t.judge = std::make_unique<LexicalJudge>();
  } else {
    t.judge = std::make_unique<RemoteJudge>(make_http_transport(config.eval.judge_endpoint));
  }
  return t;
}

EvalReport evaluate_policy(const Workspace& ws, const PolicyParams& policy, EvalTools& tools,
                           const PolicyParams* reference) {
  const auto& cfg = ws.config;
  DecodeConfig decode = eval_decode_config();
  decode.beam_width = cfg.eval.beam_width;
  decode.max_len = cfg.eval.max_len;
  EvalReport report;
  report.oracle = fidelity_adequacy_point(policy, ws.dataset.eval, ws.vocab, ws.lexicon, decode);

  std::vector<EvalRecord> och_records;
  std::vector<ChairRecord> chair_records;
  for (std::size_t i = 0; i < ws.dataset.eval.size(); ++i) {
    const auto& rec = ws.dataset.eval[i];
    GroundTruth gt;
    gt.caption = rec.reference_captions.empty() ? std::string() : rec.reference_captions.front();
    ChairRecord cr;
    cr.prediction = report.oracle.captions[i];
    for (const auto& f : rec.scene.objects) {
      gt.objects.push_back(f.object);
      if (auto c = tools.synonyms.canonical(f.object)) cr.gt_categories.insert(*c);
    }
    och_records.push_back({report.oracle.captions[i], std::move(gt)});
    chair_records.push_back(std::move(cr));
  }
  report.och = openchair_eval(och_records, *tools.judge, tools.concreteness, default_ignore_list(),
                              cfg.eval.max_in_flight);
  report.chair = chair_eval(chair_records, tools.synonyms);
  if (reference != nullptr) {
    report.kl = estimate_kl(policy, *reference, probe_scenes(ws.dataset, cfg.eval.kl_scenes), cfg.eval.kl_samples,
                            cfg.rl.decode.max_len, module_seed(cfg.seed, "kl-probe"));
  }
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j{{"p_bar", oracle.mean_contradiction},
                   {"adequacy_f1", oracle.mean_f1},
                   {"fidelity", oracle.fidelity},
                   {"adequacy", oracle.adequacy},
                   {"instance_rate", oracle.instance_rate},
                   {"sentence_rate", oracle.sentence_rate},
                   {"ch_i", chair.ch_i},
                   {"ch_s", chair.ch_s},
                   {"och", och.och_rate},
                   {"och_unsure_fraction", och.unsure_fraction},
                   {"och_unsure_warning", och.unsure_warning},
                   {"length", oracle.mean_length}};
  j["kl"] = kl ? nlohmann::json(*kl) : nlohmann::json();
  return j;
}

ResultRow make_row(const Workspace& ws, const RunVariant& variant, const MochaRun& run, EvalReport report) {
  ResultRow row;
  row.variant = variant.name;
  row.alpha = variant.reward.alpha;
  row.beta = variant.reward.beta;
  row.algorithm = algorithm_name(variant.algorithm);
  row.rl_seed = variant.rl_seed;
  row.dataset_hash = ws.dataset_hash;
  row.final_base = final_base_reward(run.log);
  row.report = std::move(report);
  return row;
}

nlohmann::json ResultRow::to_json() const {
  nlohmann::json j{{"variant", variant},   {"alpha", alpha},
                   {"beta", beta},         {"algorithm", algorithm},
                   {"fidelity_weight", alpha}, {"adequacy_weight", 1.0 - alpha},
                   {"rl_seed", rl_seed},   {"dataset_hash", dataset_hash},
                   {"final_base", final_base}};
  j.update(report.to_json());
  return j;
}

void write_result_table(std::ostream& out, const std::vector<ResultRow>& rows) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %5s %6s %5s %7s %7s %7s %7s %7s %7s %6s %7s %8s\n", "variant", "alpha", "beta",
                "algo", "p_bar", "F1", "CH_i", "CH_s", "OCH", "inst", "len", "KL", "base");
  out << buf;
  for (const auto& r : rows) {
    const auto& p = r.report.oracle;
    std::snprintf(buf, sizeof buf, "%-10s %5.2f %6.3f %5s %7.4f %7.4f %7.4f %7.4f %7.4f %7.4f %6.2f %7.4f %8.4f\n",
                  r.variant.c_str(), r.alpha, r.beta, r.algorithm.c_str(), p.mean_contradiction, p.mean_f1,
                  r.report.chair.ch_i, r.report.chair.ch_s, r.report.och.och_rate, p.instance_rate, p.mean_length,
                  r.report.kl.value_or(0.0), r.final_base);
    out << buf;
  }
}

void write_result_records(std::ostream& out, const std::vector<ResultRow>& rows) {
  for (const auto& r : rows) out << r.to_json().dump() << "\n";
}

}  // namespace mocha
