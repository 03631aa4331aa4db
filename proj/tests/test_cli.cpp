#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "local_server.hpp"
#include "mocha/cli.hpp"
#include "mocha/config.hpp"
#include "mocha/errors.hpp"
#include "mocha/experiments.hpp"
#include "mocha/manifest.hpp"

using namespace mocha;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"([world]
feature_dim = 16
train_scenes = 200
eval_scenes = 30
[policy]
hidden = 16
[mle]
epochs = 2
[rl]
iterations = 4
images_per_batch = 3
samples_per_image = 4
probe_size = 5
[eval]
kl_scenes = 5
kl_samples = 2
[bench]
target = 5
)";

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("mocha_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

nlohmann::json manifest_of(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "manifest.json")); }

std::vector<nlohmann::json> jsonl(const fs::path& p) {
  std::vector<nlohmann::json> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
  }
  return rows;
}

// Temp dir holding the tiny config; commands write under <dir>/out.
struct Project {
  TempDir tmp;
  fs::path config;
  fs::path out;
  explicit Project(const std::string& extra = "") {
    config = tmp.path / "tiny.ini";
    out = tmp.path / "out";
    write(config, std::string(kTinyConfig) + extra);
  }
  Result cmd(std::vector<std::string> args, const fs::path& out_dir = {}) const {
    std::vector<std::string> full{"--config", config.string(), "--out-dir", (out_dir.empty() ? out : out_dir).string()};
    full.insert(full.end(), args.begin(), args.end());
    return run(full);
  }
};

}  // namespace

TEST_CASE("config entries: sections, comments and line numbers") {
  std::istringstream in("seed = 3  # trailing\n\n[world]\n; comment\nbias_rate = 0.2\n");
  const auto e = parse_config_entries(in, "x.ini");
  REQUIRE(e.size() == 2);
  CHECK(e[0].section == "run");
  CHECK(e[0].value == "3");
  CHECK(e[0].line == 1);
  CHECK(e[1].section == "world");
  CHECK(e[1].key == "bias_rate");
  CHECK(e[1].line == 5);

  std::istringstream bad("[world\n");
  CHECK_THROWS_WITH_AS(parse_config_entries(bad, "x.ini"), doctest::Contains("x.ini:1"), ConfigError);
  std::istringstream noeq("[world]\nbias_rate 0.2\n");
  CHECK_THROWS_WITH_AS(parse_config_entries(noeq, "x.ini"), doctest::Contains("x.ini:2"), ConfigError);
}

TEST_CASE("config: unknown keys and bad values cite their line") {
  std::istringstream in("[world]\nbias_rate = 0.2\nbogus = 1\n[rl]\nlr = fast\n[nowhere]\nx = 1\n");
  try {
    parse_run_config(in, "c.ini", {}, "data");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("c.ini:3: unknown key 'bogus' in [world]") != std::string::npos);
    CHECK(msg.find("c.ini:5: rl.lr") != std::string::npos);
    CHECK(msg.find("c.ini:7: unknown key 'x' in [nowhere]") != std::string::npos);
  }
}

TEST_CASE("config: values, relative paths and derived seeds") {
  std::istringstream in(
      "[run]\nseed = 9\n[world]\nscene_size_range = [3, 5]\n[reward]\nalpha = 0.25\n[rl]\nalgorithm = scst\n"
      "[eval]\nsynonyms = syn.tsv\n[sweep]\nalphas = 0, 1\n[bench]\nnegative_prompt = a, b\n");
  const RunConfig c = parse_run_config(in, "c.ini", "/cfg", "/data");
  CHECK(c.seed == 9);
  CHECK(c.world.min_scene_size == 3);
  CHECK(c.world.max_scene_size == 5);
  CHECK(c.reward.alpha == 0.25);
  CHECK(c.rl.algorithm == Algorithm::Scst);
  CHECK(c.eval.synonyms == fs::path("/cfg/syn.tsv"));
  CHECK(c.eval.concreteness == fs::path("/data/concreteness.tsv"));
  CHECK(c.sweep_alphas == std::vector<double>{0.0, 1.0});
  CHECK(c.bench.gen.negative_prompt == "a, b");

  CHECK(c.world.seed == module_seed(9, "world"));
  CHECK(c.rl.seed == module_seed(9, "rl"));
  CHECK(c.world.seed != c.rl.seed);
  CHECK(c.mle.seed != c.bench.gen.seed);
  CHECK(module_seed(9, "world") != module_seed(10, "world"));
}

TEST_CASE("config: defaults surface the published constants") {
  const RunConfig c = default_run_config("data");
  CHECK(c.reward.alpha == 0.5);
  CHECK(c.reward.beta == 0.02);
  CHECK(c.rl.clip_eps == 0.2);
  CHECK(c.rl.decode.nucleus_p == 0.9);
  CHECK(c.rl.decode.temperature == 1.2);
  CHECK(c.rl.decode.max_len == 40);
  CHECK(c.rl.grad_clip_norm == 5.0);
  CHECK(c.rl.ppo_epochs == 4);
  CHECK(c.rl.images_per_batch == 10);
  CHECK(c.rl.samples_per_image == 10);
  CHECK(c.eval.beam_width == 5);
  CHECK(c.bench.gen.guidance == 10.0);
  CHECK(c.bench.gen.steps == 40);
  CHECK(c.sweep_alphas == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
}

TEST_CASE("shipped default config parses to the built-in defaults") {
  const fs::path shipped = fs::path(MOCHA_DATA_DIR).parent_path() / "configs" / "default.ini";
  const RunConfig c = load_run_config(shipped, MOCHA_DATA_DIR);
  const RunConfig d = default_run_config(MOCHA_DATA_DIR);
  CHECK(c.world == d.world);
  CHECK(c.policy == d.policy);
  CHECK(c.reward.alpha == d.reward.alpha);
  CHECK(c.reward.beta == d.reward.beta);
  CHECK(c.rl.lr == d.rl.lr);
  CHECK(c.rl.total_iterations == d.rl.total_iterations);
  CHECK(c.mle.epochs == d.mle.epochs);
  CHECK(c.mle.lr == d.mle.lr);
  CHECK(c.bench.gen.negative_prompt == d.bench.gen.negative_prompt);
}

TEST_CASE("git blob hash matches git's object ids") {
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("manifest writes atomically and round-trips") {
  TempDir tmp;
  RunManifest m;
  m.command = "x";
  m.config_text = "seed = 1\n";
  m.seeds = {{"run", 1}};
  m.started = iso8601_utc(std::chrono::system_clock::time_point{});
  CHECK(m.started == "1970-01-01T00:00:00Z");
  write(tmp.path / "a.txt", "hello\n");
  m.add_output(tmp.path / "a.txt", tmp.path);
  m.seal_inputs();
  const fs::path p = tmp.path / "manifest.json";
  m.write_atomic(p);
  CHECK_FALSE(fs::exists(tmp.path / "manifest.json.tmp"));
  const RunManifest back = RunManifest::from_json(nlohmann::json::parse(slurp(p)));
  CHECK(back.outputs.size() == 1);
  CHECK(back.outputs[0].path == "a.txt");
  CHECK(back.outputs[0].hash == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(back.input_hash == m.input_hash);
  CHECK(back.to_json() == m.to_json());
}

TEST_CASE("synth-init: dataset, manifest and seed determinism") {
  Project p;
  const auto r = p.cmd({"synth-init"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const fs::path dir = p.out / "synth-init";
  CHECK(fs::exists(dir / "dataset.txt"));
  const auto m = manifest_of(dir);
  CHECK(m["command"] == "synth-init");
  CHECK(m["outputs"][0]["path"] == "dataset.txt");
  CHECK(m["outputs"][0]["hash"] == git_blob_hash_file(dir / "dataset.txt"));
  CHECK(m["seeds"]["world"] == module_seed(1, "world"));

  const auto again = p.cmd({"synth-init"}, p.tmp.path / "again");
  REQUIRE(again.code == kExitOk);
  const auto m2 = manifest_of(p.tmp.path / "again" / "synth-init");
  CHECK(m2["outputs"][0]["hash"] == m["outputs"][0]["hash"]);
  CHECK(m2["input_hash"] == m["input_hash"]);

  const auto other = p.cmd({"--seed", "2", "synth-init"}, p.tmp.path / "other");
  REQUIRE(other.code == kExitOk);
  CHECK(manifest_of(p.tmp.path / "other" / "synth-init")["outputs"][0]["hash"] != m["outputs"][0]["hash"]);
}

TEST_CASE("config errors exit with code 2") {
  Project bad_range("[world]\nscene_size_range = [5, 2]\n");
  auto r = bad_range.cmd({"synth-init"});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("scene_size_range") != std::string::npos);

  Project unknown("[world]\ncolour = red\n");
  r = unknown.cmd({"synth-init"});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("tiny.ini:20: unknown key 'colour'") != std::string::npos);

  CHECK(run({"no-such-command"}).code == kExitConfig);
  CHECK(run({"--config", "/nonexistent.ini", "synth-init"}).code == kExitConfig);
}

TEST_CASE("mocha-train: missing checkpoint, zero iterations, routing and resume") {
  Project p;
  auto r = p.cmd({"mocha-train"});
  CHECK(r.code == kExitRuntime);
  CHECK(r.err.find("missing MLE checkpoint") != std::string::npos);

  REQUIRE(p.cmd({"mle-train"}).code == kExitOk);
  const fs::path init = p.out / "mle-train" / "mle.ckpt";

  SUBCASE("iterations = 0 is a no-op with a manifest") {
    r = p.cmd({"mocha-train", "--iterations", "0"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const fs::path dir = p.out / "mocha-train";
    CHECK(slurp(dir / "policy.ckpt") == slurp(init));
    CHECK(slurp(dir / "log.csv") ==
          "iteration,mean_rf,mean_ra,mean_K,mean_base,clip_fraction,probe_halluc_rate,probe_F1,mean_len\n");
    CHECK(manifest_of(dir)["results"]["iterations_run"] == 0);
  }

  SUBCASE("--algorithm scst routes to the SCST update") {
    r = p.cmd({"mocha-train", "--algorithm", "scst", "--iterations", "2"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const fs::path dir = p.out / "mocha-train";
    CHECK(manifest_of(dir)["parameters"]["rl.algorithm"] == "scst");

    RunConfig cfg = load_run_config(p.config, MOCHA_DATA_DIR);
    cfg.rl.total_iterations = 2;
    const Workspace ws = Workspace::build(cfg);
    std::ifstream in(init);
    const PolicyParams start = PolicyParams::load(in);
    const RewardScorers scorers(cfg);
    const auto scst = run_mocha(ws, start, ablation_variant(cfg, "scst"), scorers);
    const auto ppo = run_mocha(ws, start, full_variant(cfg), scorers);
    std::ostringstream a, b;
    scst.state.policy.save(a);
    ppo.state.policy.save(b);
    CHECK(slurp(dir / "policy.ckpt") == a.str());
    CHECK(a.str() != b.str());
  }

  SUBCASE("resumed run reproduces the uninterrupted log tail") {
    const std::string pin = "[rl]\ninit_checkpoint = " + init.string() + "\n";
    Project full(pin);
    REQUIRE(full.cmd({"mocha-train", "--iterations", "4"}).code == kExitOk);
    Project split(pin);
    REQUIRE(split.cmd({"mocha-train", "--iterations", "2"}).code == kExitOk);
    r = split.cmd({"mocha-train", "--resume", "--iterations", "4"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(slurp(split.out / "mocha-train" / "log.csv") == slurp(full.out / "mocha-train" / "log.csv"));
    CHECK(slurp(split.out / "mocha-train" / "policy.ckpt") ==
          slurp(full.out / "mocha-train" / "policy.ckpt"));
    CHECK(manifest_of(split.out / "mocha-train")["parameters"]["resumed_from_iteration"] == "2");
  }
}

TEST_CASE("mocha-train writes periodic checkpoints listed in the manifest") {
  Project p("[rl]\ncheckpoint_every = 2\n");
  REQUIRE(p.cmd({"mle-train"}).code == kExitOk);
  REQUIRE(p.cmd({"mocha-train"}).code == kExitOk);
  const auto m = manifest_of(p.out / "mocha-train");
  std::vector<std::string> paths;
  for (const auto& f : m["outputs"]) paths.push_back(f["path"]);
  CHECK(std::count(paths.begin(), paths.end(), "checkpoints/iter_2.state") == 1);
  CHECK(std::count(paths.begin(), paths.end(), "checkpoints/iter_4.state") == 1);
}

TEST_CASE("sweep-alpha: one row per alpha, weights recorded") {
  Project p;
  const auto r = p.cmd({"sweep-alpha", "--iterations", "1"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const auto rows = jsonl(p.out / "sweep-alpha" / "sweep.jsonl");
  REQUIRE(rows.size() == 5);
  std::vector<double> alphas;
  for (const auto& row : rows) alphas.push_back(row["alpha"]);
  CHECK(alphas == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK(rows[4]["adequacy_weight"] == 0.0);
  CHECK(rows[0]["fidelity_weight"] == 0.0);
  for (const auto& row : rows) {
    CHECK(row.contains("length"));
    CHECK(row["dataset_hash"] == rows[0]["dataset_hash"]);
  }
  CHECK(manifest_of(p.out / "sweep-alpha")["results"]["partial"] == false);

  const auto two = p.cmd({"sweep-alpha", "--iterations", "1", "--alphas", "0.5,1"}, p.tmp.path / "two");
  REQUIRE(two.code == kExitOk);
  CHECK(jsonl(p.tmp.path / "two" / "sweep-alpha" / "sweep.jsonl").size() == 2);
  CHECK(p.cmd({"sweep-alpha", "--alphas", "0.5,2"}).code == kExitConfig);
}

TEST_CASE("ablate: paired full row, beta recorded, shared dataset") {
  Project p;
  const auto r = p.cmd({"ablate", "--which", "no_kl", "--which", "no_ra", "--iterations", "1"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const auto rows = jsonl(p.out / "ablate" / "ablation.jsonl");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0]["variant"] == "full");
  CHECK(rows[1]["variant"] == "no_kl");
  CHECK(rows[1]["beta"] == 0.0);
  CHECK(rows[2]["alpha"] == 1.0);
  for (const auto& row : rows) {
    CHECK(row["dataset_hash"] == rows[0]["dataset_hash"]);
    CHECK(row["rl_seed"] == rows[0]["rl_seed"]);
  }
  CHECK(p.cmd({"ablate", "--which", "no_fun"}).code == kExitConfig);
}

TEST_CASE("eval: metric roster and repeatability") {
  Project p;
  REQUIRE(p.cmd({"mle-train"}).code == kExitOk);
  const std::string ckpt = (p.out / "mle-train" / "mle.ckpt").string();
  REQUIRE(p.cmd({"eval", "--checkpoint", ckpt}).code == kExitOk);
  const auto report = nlohmann::json::parse(slurp(p.out / "eval" / "report.json"));
  for (const char* key : {"p_bar", "adequacy_f1", "ch_i", "ch_s", "och", "length", "instance_rate", "sentence_rate"}) {
    CHECK_MESSAGE(report.contains(key), key);
  }
  REQUIRE(p.cmd({"eval", "--checkpoint", ckpt}, p.tmp.path / "again").code == kExitOk);
  CHECK(slurp(p.tmp.path / "again" / "eval" / "report.json") == slurp(p.out / "eval" / "report.json"));
  CHECK(p.cmd({"eval", "--checkpoint", (p.tmp.path / "none.ckpt").string()}).code == kExitRuntime);
}

TEST_CASE("eval: lexical and remote judges agree on an all-correct fixture") {
  std::atomic<int> hits{0};
  testing::LocalServer judge(
      [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.set_content(R"({"text": "Yes"})", "application/json");
      },
      "/generate");
  Project p("[eval]\njudge_url = " + judge.url() + "\njudge_path = /generate\n");
  const fs::path records = p.tmp.path / "records.jsonl";
  write(records,
        R"({"prediction": "a dog sleeping on a couch", "gt_caption": "a dog on a sofa", "gt_objects": ["dog", "couch"]})"
        "\n"
        R"({"prediction": "a pizza on a table", "gt_caption": "pizza", "gt_objects": ["pizza", "table"]})"
        "\n");
  const auto lexical = p.cmd({"eval", "--records", records.string()});
  REQUIRE_MESSAGE(lexical.code == kExitOk, lexical.err);
  const auto lex_report = nlohmann::json::parse(slurp(p.out / "eval" / "report.json"));
  const auto remote = p.cmd({"--judge", "remote", "eval", "--records", records.string()}, p.tmp.path / "remote");
  REQUIRE_MESSAGE(remote.code == kExitOk, remote.err);
  const auto rem_report = nlohmann::json::parse(slurp(p.tmp.path / "remote" / "eval" / "report.json"));
  CHECK(lex_report["och"] == 0.0);
  CHECK(rem_report["och"] == 0.0);
  CHECK(lex_report["och_n_e"] == 4);
  CHECK(rem_report["och_n_e"] == 4);
  CHECK(hits == 4);
}

TEST_CASE("bench-build: replay is byte-identical, target honored, summary reported") {
  Project p;
  auto r = p.cmd({"bench-build", "--record", "transcript.jsonl"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const fs::path dir = p.out / "bench-build";
  CHECK(jsonl(dir / "bench.jsonl").size() == 5);
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK(summary["records"] == 5);
  CHECK(summary.contains("object_types"));

  const std::string transcript = (dir / "transcript.jsonl").string();
  for (const char* name : {"replay1", "replay2"}) {
    r = p.cmd({"--replay", transcript, "bench-build"}, p.tmp.path / name);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  }
  const auto a = slurp(p.tmp.path / "replay1" / "bench-build" / "bench.jsonl");
  CHECK(a == slurp(p.tmp.path / "replay2" / "bench-build" / "bench.jsonl"));
  CHECK(a == slurp(dir / "bench.jsonl"));
  for (const auto& rec : jsonl(dir / "bench.jsonl")) {
    CHECK(rec["image_prompt"]["negative"] == kDefaultNegativePrompt);
  }

  r = p.cmd({"--replay", transcript, "bench-build", "--target", "6"}, p.tmp.path / "diverged");
  CHECK(r.code == kExitService);

  r = p.cmd({"bench-build", "--target", "3"}, p.tmp.path / "three");
  REQUIRE(r.code == kExitOk);
  CHECK(jsonl(p.tmp.path / "three" / "bench-build" / "bench.jsonl").size() == 3);
}

TEST_CASE("unreachable remote LLM exits with code 4") {
  Project p("[bench]\nllm = remote\nllm_url = http://127.0.0.1:1\nllm_retries = 0\nllm_timeout = 1\n");
  CHECK(p.cmd({"bench-build"}).code == kExitService);
}
