#include "mocha/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "mocha/benchgen.hpp"
#include "mocha/config.hpp"
#include "mocha/errors.hpp"
#include "mocha/experiments.hpp"
#include "mocha/manifest.hpp"

#ifndef MOCHA_DATA_DIR
#define MOCHA_DATA_DIR "data"
#endif

namespace mocha {

namespace fs = std::filesystem;

namespace {

// Options shared by every subcommand.
struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs";
  std::string replay;
  std::string judge;
};

struct CommandOptions {
  bool resume = false;
  std::string resume_from;
  std::string algorithm;
  std::string alphas;
  std::vector<std::string> which;
  std::string checkpoint;
  std::string records;
  std::string record_transcript;
  std::optional<std::size_t> target;
  std::optional<std::size_t> iterations;
};

fs::path data_dir() {
  if (const char* env = std::getenv("MOCHA_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return MOCHA_DATA_DIR;
}

RunConfig load_config(const GlobalOptions& g) {
  RunConfig cfg = g.config.empty() ? default_run_config(data_dir()) : load_run_config(g.config, data_dir());
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.derive_seeds();
  }
  if (!g.judge.empty()) {
    if (g.judge == "lexical") {
      cfg.eval.judge = JudgeKind::Lexical;
    } else if (g.judge == "remote") {
      cfg.eval.judge = JudgeKind::Remote;
    } else {
      throw ConfigError("--judge must be lexical or remote");
    }
  }
  cfg.validate();
  return cfg;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

// Collects everything a command's manifest needs and writes it last.
class ManifestScope {
 public:
  ManifestScope(std::string command, const RunConfig& cfg, fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    m_.command = std::move(command);
    m_.config_path = cfg.source.string();
    m_.config_text = cfg.text;
    m_.seeds = {{"run", cfg.seed},
                {"world", cfg.world.seed},
                {"mle", cfg.mle.seed},
                {"rl", cfg.rl.seed},
                {"bench", cfg.bench.gen.seed}};
    m_.module_versions = module_versions();
    m_.started = iso8601_utc(std::chrono::system_clock::now());
    if (!cfg.source.empty()) m_.add_input(cfg.source);
  }

  RunManifest& manifest() { return m_; }
  const fs::path& dir() const { return dir_; }
  fs::path path(const std::string& name) const { return dir_ / name; }
  void input(const fs::path& p) { m_.add_input(p); }
  void output(const fs::path& p) { m_.add_output(p, dir_); }
  void param(const std::string& k, const std::string& v) { m_.parameters[k] = v; }

  fs::path finish() {
    m_.finished = iso8601_utc(std::chrono::system_clock::now());
    m_.seal_inputs();
    const fs::path p = dir_ / "manifest.json";
    m_.write_atomic(p);
    return p;
  }

 private:
  fs::path dir_;
  RunManifest m_;
};

void world_params(ManifestScope& ms, const RunConfig& cfg) {
  ms.param("world.feature_dim", std::to_string(cfg.world.feature_dim));
  ms.param("world.train_scenes", std::to_string(cfg.world.num_train_scenes));
  ms.param("world.eval_scenes", std::to_string(cfg.world.num_eval_scenes));
  ms.param("world.bias_rate", fmt(cfg.world.bias_rate));
}

void reward_params(ManifestScope& ms, const RunConfig& cfg) {
  ms.param("reward.alpha", fmt(cfg.reward.alpha));
  ms.param("reward.beta", fmt(cfg.reward.beta));
  ms.param("rl.iterations", std::to_string(cfg.rl.total_iterations));
  ms.param("rl.lr", fmt(cfg.rl.lr));
  ms.param("rl.algorithm", cfg.rl.algorithm == Algorithm::Ppo ? "ppo" : "scst");
}

template <typename Fn>
void write_file(const fs::path& p, Fn&& body) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  body(out);
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

PolicyParams read_params(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing checkpoint " + p.string());
  return PolicyParams::load(in);
}

fs::path default_mle_checkpoint(const GlobalOptions& g) { return fs::path(g.out_dir) / "mle-train" / "mle.ckpt"; }

// Explicit init_checkpoint, else the mle-train output if present.
std::optional<fs::path> find_init_checkpoint(const RunConfig& cfg, const GlobalOptions& g) {
  if (!cfg.init_checkpoint.empty()) return cfg.init_checkpoint;
  const fs::path p = default_mle_checkpoint(g);
  if (fs::exists(p)) return p;
  return std::nullopt;
}

void check_shape(const PolicyParams& p, const Workspace& ws) {
  if (!(p.shape() == policy_shape(ws.config, ws.vocab))) {
    throw ConfigError("checkpoint shape does not match the [world]/[policy] configuration");
  }
}

// --- synth-init -------------------------------------------------------------

int cmd_synth_init(const GlobalOptions& g, std::ostream& out) {
  const RunConfig cfg = load_config(g);
  ManifestScope ms("synth-init", cfg, fs::path(g.out_dir) / "synth-init");
  world_params(ms, cfg);
  const Workspace ws = Workspace::build(cfg);
  const fs::path data = ms.path("dataset.txt");
  write_file(data, [&](std::ostream& o) { ws.dataset.save(o); });
  ms.output(data);
  ms.manifest().results = {{"dataset_hash", ws.dataset_hash},
                           {"train_scenes", ws.dataset.train.size()},
                           {"eval_scenes", ws.dataset.eval.size()}};
  const fs::path m = ms.finish();
  out << "dataset " << data.string() << " (" << ws.dataset_hash << ")\nmanifest " << m.string() << "\n";
  return kExitOk;
}

// --- mle-train --------------------------------------------------------------

int cmd_mle_train(const GlobalOptions& g, std::ostream& out) {
  const RunConfig cfg = load_config(g);
  ManifestScope ms("mle-train", cfg, fs::path(g.out_dir) / "mle-train");
  world_params(ms, cfg);
  ms.param("mle.epochs", std::to_string(cfg.mle.epochs));
  ms.param("mle.lr", fmt(cfg.mle.lr));
  const Workspace ws = Workspace::build(cfg);
  MleResult res;
  const PolicyParams params = pretrain(ws, &res);
  const fs::path ckpt = ms.path("mle.ckpt");
  write_file(ckpt, [&](std::ostream& o) { params.save(o); });
  const fs::path log = ms.path("mle_log.csv");
  write_file(log, [&](std::ostream& o) {
    o << "epoch,loss\n0," << fmt(res.initial_loss) << "\n";
    for (std::size_t i = 0; i < res.epoch_loss.size(); ++i) o << i + 1 << "," << fmt(res.epoch_loss[i]) << "\n";
  });
  ms.output(ckpt);
  ms.output(log);
  ms.manifest().results = {{"dataset_hash", ws.dataset_hash},
                           {"initial_loss", res.initial_loss},
                           {"final_loss", res.epoch_loss.empty() ? res.initial_loss : res.epoch_loss.back()}};
  const fs::path m = ms.finish();
  out << "checkpoint " << ckpt.string() << "\nmanifest " << m.string() << "\n";
  return kExitOk;
}

// --- mocha-train ------------------------------------------------------------

int cmd_mocha_train(const GlobalOptions& g, const CommandOptions& o, std::ostream& out) {
  RunConfig cfg = load_config(g);
  if (!o.algorithm.empty()) {
    if (o.algorithm == "ppo") {
      cfg.rl.algorithm = Algorithm::Ppo;
    } else if (o.algorithm == "scst") {
      cfg.rl.algorithm = Algorithm::Scst;
    } else {
      throw ConfigError("--algorithm must be ppo or scst");
    }
  }
  if (o.iterations) cfg.rl.total_iterations = *o.iterations;
  ManifestScope ms("mocha-train", cfg, fs::path(g.out_dir) / "mocha-train");
  world_params(ms, cfg);
  reward_params(ms, cfg);
  const Workspace ws = Workspace::build(cfg);
  const RunVariant variant = full_variant(cfg);
  const RewardScorers scorers(cfg);

  const fs::path state_path = ms.path("state.txt");
  const fs::path log_path = ms.path("log.csv");
  const fs::path ckpt_dir = ms.path("checkpoints");
  std::optional<TrainState> state;
  if (o.resume || !o.resume_from.empty()) {
    const fs::path from = o.resume_from.empty() ? state_path : fs::path(o.resume_from);
    std::ifstream in(from);
    if (!in) throw std::runtime_error("missing resume state " + from.string());
    state = TrainState::load(in);
    check_shape(state->policy, ws);
    ms.input(from);
    ms.param("resumed_from_iteration", std::to_string(state->iteration));
  } else {
    const auto init = find_init_checkpoint(cfg, g);
    if (!init) {
      throw std::runtime_error("missing MLE checkpoint: run mle-train first or set [rl] init_checkpoint");
    }
    const PolicyParams params = read_params(*init);
    check_shape(params, ws);
    ms.input(*init);
    state = TrainState::start(params, cfg.rl);
  }

  const bool append = state->iteration > 0 && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  if (!append) write_log_header(log);
  std::vector<fs::path> checkpoints;
  TrainHooks hooks;
  hooks.on_iteration = [&](const IterationLog& row) {
    write_log_row(log, row);
    log.flush();
  };
  hooks.on_checkpoint = [&](const TrainState& s) {
    fs::create_directories(ckpt_dir);
    const fs::path p = ckpt_dir / ("iter_" + std::to_string(s.iteration) + ".state");
    write_file(p, [&](std::ostream& os) { s.save(os); });
    checkpoints.push_back(p);
  };
  const auto rows = resume_mocha(ws, *state, variant, scorers, hooks);
  log.close();

  write_file(state_path, [&](std::ostream& os) { state->save(os); });
  const fs::path policy_path = ms.path("policy.ckpt");
  write_file(policy_path, [&](std::ostream& os) { state->policy.save(os); });
  ms.output(log_path);
  ms.output(state_path);
  ms.output(policy_path);
  for (const auto& p : checkpoints) ms.output(p);
  ms.manifest().results = {{"dataset_hash", ws.dataset_hash},
                           {"iterations_run", rows.size()},
                           {"final_iteration", state->iteration},
                           {"final_base", final_base_reward(rows)}};
  const fs::path m = ms.finish();
  out << "ran " << rows.size() << " iterations (now at " << state->iteration << ")\npolicy " << policy_path.string()
      << "\nmanifest " << m.string() << "\n";
  return kExitOk;
}

// --- sweep-alpha / ablate ---------------------------------------------------

PolicyParams init_policy(const RunConfig& cfg, const GlobalOptions& g, const Workspace& ws, ManifestScope& ms) {
  if (const auto init = find_init_checkpoint(cfg, g)) {
    PolicyParams p = read_params(*init);
    check_shape(p, ws);
    ms.input(*init);
    return p;
  }
  PolicyParams p = pretrain(ws);
  const fs::path ckpt = ms.path("mle.ckpt");
  write_file(ckpt, [&](std::ostream& os) { p.save(os); });
  ms.output(ckpt);
  return p;
}

std::string tag(double alpha) {
  std::ostringstream ss;
  ss << alpha;
  return ss.str();
}

void emit_tables(ManifestScope& ms, const std::string& stem, const std::vector<ResultRow>& rows,
                 const std::vector<nlohmann::json>& failures, std::ostream& out) {
  const fs::path table = ms.path(stem + ".txt");
  const fs::path records = ms.path(stem + ".jsonl");
  write_file(table, [&](std::ostream& os) {
    write_result_table(os, rows);
    for (const auto& f : failures) os << "FAILED " << f.dump() << "\n";
    if (!failures.empty()) os << "PARTIAL TABLE: " << failures.size() << " member run(s) failed\n";
  });
  write_file(records, [&](std::ostream& os) {
    write_result_records(os, rows);
    for (const auto& f : failures) os << f.dump() << "\n";
  });
  ms.output(table);
  ms.output(records);
  write_result_table(out, rows);
  for (const auto& f : failures) out << "FAILED " << f.dump() << "\n";
}

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double a = std::stod(item, &used);
      if (used != item.size() || !(a >= 0.0 && a <= 1.0)) throw std::invalid_argument(item);
      out.push_back(a);
    } catch (const std::exception&) {
      throw ConfigError("--alphas: '" + item + "' is not a number in [0,1]");
    }
  }
  if (out.empty()) throw ConfigError("--alphas is empty");
  return out;
}

int cmd_sweep_alpha(const GlobalOptions& g, const CommandOptions& o, std::ostream& out) {
  RunConfig cfg = load_config(g);
  if (!o.alphas.empty()) cfg.sweep_alphas = parse_alphas(o.alphas);
  if (o.iterations) cfg.rl.total_iterations = *o.iterations;
  ManifestScope ms("sweep-alpha", cfg, fs::path(g.out_dir) / "sweep-alpha");
  world_params(ms, cfg);
  reward_params(ms, cfg);
  const Workspace ws = Workspace::build(cfg);
  const PolicyParams init = init_policy(cfg, g, ws, ms);
  const RewardScorers scorers(cfg);
  EvalTools tools = EvalTools::load(cfg);
  ms.input(cfg.eval.concreteness);
  ms.input(cfg.eval.synonyms);

  std::vector<ResultRow> rows;
  std::vector<nlohmann::json> failures;
  for (const double alpha : cfg.sweep_alphas) {
    RunVariant v = full_variant(cfg);
    v.name = "alpha=" + tag(alpha);
    v.reward.alpha = alpha;
    try {
      const MochaRun run = run_mocha(ws, init, v, scorers);
      const fs::path ckpt = ms.path("alpha_" + tag(alpha) + ".ckpt");
      write_file(ckpt, [&](std::ostream& os) { run.state.policy.save(os); });
      ms.output(ckpt);
      rows.push_back(make_row(ws, v, run, evaluate_policy(ws, run.state.policy, tools, &run.state.frozen.params())));
    } catch (const std::exception& e) {
      failures.push_back({{"variant", v.name}, {"alpha", alpha}, {"error", e.what()}});
    }
  }
  emit_tables(ms, "sweep", rows, failures, out);
  ms.manifest().results = {{"dataset_hash", ws.dataset_hash}, {"rows", rows.size()}, {"partial", !failures.empty()}};
  out << "manifest " << ms.finish().string() << "\n";
  return failures.empty() ? kExitOk : kExitRuntime;
}

int cmd_ablate(const GlobalOptions& g, const CommandOptions& o, std::ostream& out) {
  RunConfig cfg = load_config(g);
  if (o.iterations) cfg.rl.total_iterations = *o.iterations;
  std::vector<std::string> which = o.which;
  if (which.empty() || (which.size() == 1 && which[0] == "all")) which = ablation_names();
  std::vector<RunVariant> variants{full_variant(cfg)};
  for (const auto& w : which) variants.push_back(ablation_variant(cfg, w));

  ManifestScope ms("ablate", cfg, fs::path(g.out_dir) / "ablate");
  world_params(ms, cfg);
  reward_params(ms, cfg);
  const Workspace ws = Workspace::build(cfg);
  const PolicyParams init = init_policy(cfg, g, ws, ms);
  const RewardScorers scorers(cfg);
  EvalTools tools = EvalTools::load(cfg);
  ms.input(cfg.eval.concreteness);
  ms.input(cfg.eval.synonyms);

  std::vector<ResultRow> rows;
  std::vector<nlohmann::json> failures;
  for (const auto& v : variants) {
    try {
      const MochaRun run = run_mocha(ws, init, v, scorers);
      const fs::path ckpt = ms.path(v.name + ".ckpt");
      write_file(ckpt, [&](std::ostream& os) { run.state.policy.save(os); });
      ms.output(ckpt);
      rows.push_back(make_row(ws, v, run, evaluate_policy(ws, run.state.policy, tools, &run.state.frozen.params())));
    } catch (const std::exception& e) {
      failures.push_back({{"variant", v.name}, {"error", e.what()}});
    }
  }
  emit_tables(ms, "ablation", rows, failures, out);
  ms.manifest().results = {{"dataset_hash", ws.dataset_hash}, {"rows", rows.size()}, {"partial", !failures.empty()}};
  out << "manifest " << ms.finish().string() << "\n";
  return failures.empty() ? kExitOk : kExitRuntime;
}

// --- eval -------------------------------------------------------------------

void write_report_text(std::ostream& os, const nlohmann::json& j) {
  for (const auto& [k, v] : j.items()) os << k << "\t" << v.dump() << "\n";
}

int cmd_eval(const GlobalOptions& g, const CommandOptions& o, std::ostream& out) {
  const RunConfig cfg = load_config(g);
  ManifestScope ms("eval", cfg, fs::path(g.out_dir) / "eval");
  ms.param("eval.judge", cfg.eval.judge == JudgeKind::Lexical ? "lexical" : "remote");
  EvalTools tools = EvalTools::load(cfg);
  ms.input(cfg.eval.concreteness);
  ms.input(cfg.eval.synonyms);
  nlohmann::json report;

  if (!o.records.empty()) {
    // Pre-decoded predictions: OpenCHAIR and CHAIR only.
    std::ifstream in(o.records);
    if (!in) throw ConfigError("cannot open records " + o.records);
    const auto records = load_eval_records(in);
    ms.input(o.records);
    const OchReport och =
        openchair_eval(records, *tools.judge, tools.concreteness, default_ignore_list(), cfg.eval.max_in_flight);
    std::vector<ChairRecord> chair_records;
    for (const auto& r : records) {
      ChairRecord cr{r.prediction, {}};
      for (const auto& obj : r.gt.objects) {
        if (auto c = tools.synonyms.canonical(obj)) cr.gt_categories.insert(*c);
      }
      chair_records.push_back(std::move(cr));
    }
    const ChairReport chair = chair_eval(chair_records, tools.synonyms);
    report = {{"records", records.size()}, {"och", och.och_rate},          {"och_n_h", och.n_h},
              {"och_n_e", och.n_e},        {"och_unsure", och.n_unsure},   {"och_unsure_warning", och.unsure_warning},
              {"ch_i", chair.ch_i},        {"ch_s", chair.ch_s}};
  } else {
    fs::path ckpt = o.checkpoint.empty() ? fs::path(g.out_dir) / "mocha-train" / "policy.ckpt" : fs::path(o.checkpoint);
    const PolicyParams policy = read_params(ckpt);
    const Workspace ws = Workspace::build(cfg);
    check_shape(policy, ws);
    ms.input(ckpt);
    const EvalReport r = evaluate_policy(ws, policy, tools);
    report = r.to_json();
    report["dataset_hash"] = ws.dataset_hash;
    report["eval_scenes"] = ws.dataset.eval.size();
    const fs::path caps = ms.path("captions.txt");
    write_file(caps, [&](std::ostream& os) {
      for (const auto& c : r.oracle.captions) os << c << "\n";
    });
    ms.output(caps);
  }
  const fs::path json_path = ms.path("report.json");
  const fs::path text_path = ms.path("report.txt");
  write_file(json_path, [&](std::ostream& os) { os << report.dump(2) << "\n"; });
  write_file(text_path, [&](std::ostream& os) { write_report_text(os, report); });
  ms.output(json_path);
  ms.output(text_path);
  ms.manifest().results = report;
  write_report_text(out, report);
  out << "manifest " << ms.finish().string() << "\n";
  return kExitOk;
}

// --- bench-build ------------------------------------------------------------

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  return load_seed_captions(in);
}

int cmd_bench_build(const GlobalOptions& g, const CommandOptions& o, std::ostream& out) {
  RunConfig cfg = load_config(g);
  if (o.target) cfg.bench.gen.target = *o.target;
  ManifestScope ms("bench-build", cfg, fs::path(g.out_dir) / "bench-build");
  ms.param("bench.target", std::to_string(cfg.bench.gen.target));
  ms.param("bench.seed", std::to_string(cfg.bench.gen.seed));
  const auto seeds = read_lines(cfg.bench.seeds);
  ms.input(cfg.bench.seeds);
  const ConcretenessLexicon lexicon = ConcretenessLexicon::load_file(cfg.bench.concreteness.string());
  ms.input(cfg.bench.concreteness);
  if (!cfg.bench.exclusions.empty()) ms.input(cfg.bench.exclusions);

  std::unique_ptr<LlmClient> base;
  if (!g.replay.empty()) {
    std::ifstream in(g.replay);
    if (!in) throw ConfigError("cannot open transcript " + g.replay);
    base = std::make_unique<ReplayLlmClient>(ReplayLlmClient::load(in));
    ms.input(g.replay);
    ms.param("llm", "replay");
  } else if (cfg.bench.llm == LlmKind::Fixture) {
    base = std::make_unique<FixtureLlmClient>(read_lines(cfg.bench.fixture_responses));
    ms.input(cfg.bench.fixture_responses);
    ms.param("llm", "fixture");
  } else {
    base = std::make_unique<RemoteLlmClient>(make_http_transport(cfg.bench.llm_endpoint));
    ms.param("llm", "remote");
  }

  BenchResult result;
  if (!o.record_transcript.empty()) {
    const fs::path tp = ms.path(o.record_transcript);
    std::ofstream transcript(tp, std::ios::binary | std::ios::trunc);
    if (!transcript) throw std::runtime_error("cannot write " + tp.string());
    RecordingLlmClient rec(*base, transcript);
    result = build_bench(seeds, rec, lexicon, cfg.bench.gen);
    transcript.close();
    ms.output(tp);
  } else {
    result = build_bench(seeds, *base, lexicon, cfg.bench.gen);
  }

  const fs::path records = ms.path("bench.jsonl");
  const fs::path summary = ms.path("summary.txt");
  const fs::path summary_json = ms.path("summary.json");
  write_file(records, [&](std::ostream& os) { write_bench_records(os, result.records); });
  write_file(summary, [&](std::ostream& os) { write_bench_summary(os, result.summary); });
  write_file(summary_json, [&](std::ostream& os) { os << result.summary.to_json().dump(2) << "\n"; });
  ms.output(records);
  ms.output(summary);
  ms.output(summary_json);
  ms.manifest().results = result.summary.to_json();
  out << "records " << result.records.size() << ", object types " << result.summary.object_types() << "\n"
      << "manifest " << ms.finish().string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-objective caption RL laboratory and hallucination benchmarks", "mocha"};
  app.require_subcommand(1);
  GlobalOptions g;
  CommandOptions o;
  app.add_option("--config", g.config, "Config file (sectioned key = value)");
  app.add_option("--seed", g.seed, "Override [run] seed");
  app.add_option("--out-dir", g.out_dir, "Output root; each command writes <out-dir>/<command>/");
  app.add_option("--replay", g.replay, "Serve LLM completions from a recorded transcript");
  app.add_option("--judge", g.judge, "OpenCHAIR judge: lexical or remote");

  std::function<int()> action;
  auto* synth = app.add_subcommand("synth-init", "Build and save the synthetic captioning world");
  synth->callback([&] { action = [&] { return cmd_synth_init(g, out); }; });

  auto* mle = app.add_subcommand("mle-train", "Maximum-likelihood pre-training");
  mle->callback([&] { action = [&] { return cmd_mle_train(g, out); }; });

  auto* train = app.add_subcommand("mocha-train", "Reinforcement-learning fine-tuning from the MLE checkpoint");
  train->add_flag("--resume", o.resume, "Continue from <out-dir>/mocha-train/state.txt");
  train->add_option("--resume-from", o.resume_from, "Continue from this training state file");
  train->add_option("--algorithm", o.algorithm, "ppo or scst (overrides [rl] algorithm)");
  train->add_option("--iterations", o.iterations, "Override [rl] iterations");
  train->callback([&] { action = [&] { return cmd_mocha_train(g, o, out); }; });

  auto* sweep = app.add_subcommand("sweep-alpha", "Train and evaluate one policy per alpha");
  sweep->add_option("--alphas", o.alphas, "Comma-separated alphas (overrides [sweep] alphas)");
  sweep->add_option("--iterations", o.iterations, "Override [rl] iterations");
  sweep->callback([&] { action = [&] { return cmd_sweep_alpha(g, o, out); }; });

  auto* ablate = app.add_subcommand("ablate", "Paired runs of the full reward and its ablations");
  ablate->add_option("--which", o.which, "no_rf, no_ra, no_kl, scst or all (repeatable)");
  ablate->add_option("--iterations", o.iterations, "Override [rl] iterations");
  ablate->callback([&] { action = [&] { return cmd_ablate(g, o, out); }; });

  auto* eval = app.add_subcommand("eval", "Beam-decode the eval split and report hallucination metrics");
  eval->add_option("--checkpoint", o.checkpoint, "Policy checkpoint (default <out-dir>/mocha-train/policy.ckpt)");
  eval->add_option("--records", o.records, "Score saved predictions instead of decoding a policy");
  eval->callback([&] { action = [&] { return cmd_eval(g, o, out); }; });

  auto* bench = app.add_subcommand("bench-build", "Build the open-vocabulary hallucination benchmark");
  bench->add_option("--target", o.target, "Override [bench] target");
  bench->add_option("--record", o.record_transcript, "Record the LLM transcript to this file in the output dir");
  bench->callback([&] { action = [&] { return cmd_bench_build(g, o, out); }; });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "mocha: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    return action();
  } catch (const ConfigError& e) {
    err << "mocha: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ServiceError& e) {
    err << "mocha: external service error: " << e.what() << "\n";
    return kExitService;
  } catch (const OchError& e) {
    err << "mocha: judge failed: " << e.what() << "\n";
    return kExitService;
  } catch (const std::exception& e) {
    err << "mocha: error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace mocha
