#include "mocha/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>

#include "mocha/errors.hpp"
#include "mocha/rng.hpp"

namespace mocha {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string strip_comment(const std::string& line) {
  const auto pos = line.find_first_of("#;");
  return pos == std::string::npos ? line : line.substr(0, pos);
}

double to_double(const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(to_u64(v)); }

int to_int(const std::string& v) {
  int out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("expected an integer, got '" + v + "'");
  return out;
}

// "a, b, c" or "[a, b, c]"; empty items are dropped.
std::vector<std::string> to_list(std::string v) {
  v = trim(v);
  if (v.size() >= 2 && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename E>
E to_enum(const std::string& v, std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (v == name) return value;
    names += names.empty() ? name : std::string("|") + name;
  }
  throw ConfigError("expected one of " + names + ", got '" + v + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
  std::filesystem::path p(v);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

using Setter = std::function<void(const std::string&)>;

std::map<std::string, Setter> setters(RunConfig& c, const std::filesystem::path& base) {
  auto path_into = [&base](std::filesystem::path& dst) { return [&dst, &base](const std::string& v) { dst = resolve(base, v); }; };
  auto endpoint = [](std::map<std::string, Setter>& m, const std::string& section, const std::string& prefix,
                     EndpointConfig& e) {
    m[section + "." + prefix + "url"] = [&e](const std::string& v) { e.base_url = v; };
    m[section + "." + prefix + "path"] = [&e](const std::string& v) { e.path = v; };
    m[section + "." + prefix + "timeout"] = [&e](const std::string& v) { e.timeout_seconds = to_double(v); };
    m[section + "." + prefix + "retries"] = [&e](const std::string& v) { e.retries = to_int(v); };
  };
  std::map<std::string, Setter> m;
  m["run.seed"] = [&c](const std::string& v) { c.seed = to_u64(v); };

  m["world.object_types"] = [&c](const std::string& v) { c.world.object_types = to_list(v); };
  m["world.attributes"] = [&c](const std::string& v) { c.world.attributes = to_list(v); };
  m["world.bias_rate"] = [&c](const std::string& v) { c.world.bias_rate = to_double(v); };
  m["world.scene_size_range"] = [&c](const std::string& v) {
    const auto parts = to_list(v);
    if (parts.size() != 2) throw ConfigError("expected [min, max], got '" + v + "'");
    c.world.min_scene_size = to_size(parts[0]);
    c.world.max_scene_size = to_size(parts[1]);
  };
  m["world.feature_dim"] = [&c](const std::string& v) { c.world.feature_dim = to_size(v); };
  m["world.train_scenes"] = [&c](const std::string& v) { c.world.num_train_scenes = to_size(v); };
  m["world.eval_scenes"] = [&c](const std::string& v) { c.world.num_eval_scenes = to_size(v); };
  m["world.captions_per_scene"] = [&c](const std::string& v) { c.world.train_captions_per_scene = to_size(v); };

  m["policy.token_dim"] = [&c](const std::string& v) { c.policy.token_dim = to_size(v); };
  m["policy.hidden"] = [&c](const std::string& v) { c.policy.hidden = to_size(v); };
  m["policy.context"] = [&c](const std::string& v) { c.policy.context = to_size(v); };

  m["mle.epochs"] = [&c](const std::string& v) { c.mle.epochs = to_size(v); };
  m["mle.lr"] = [&c](const std::string& v) { c.mle.lr = to_double(v); };
  m["mle.batch_size"] = [&c](const std::string& v) { c.mle.batch_size = to_size(v); };
  m["mle.grad_clip"] = [&c](const std::string& v) { c.mle.grad_clip_norm = to_double(v); };

  m["reward.alpha"] = [&c](const std::string& v) { c.reward.alpha = to_double(v); };
  m["reward.beta"] = [&c](const std::string& v) { c.reward.beta = to_double(v); };
  m["reward.scorer"] = [&c](const std::string& v) {
    c.scorer = to_enum<ScorerKind>(v, {{"oracle", ScorerKind::Oracle}, {"remote", ScorerKind::Remote}});
  };
  endpoint(m, "reward", "fidelity_", c.fidelity_endpoint);
  endpoint(m, "reward", "adequacy_", c.adequacy_endpoint);

  m["rl.algorithm"] = [&c](const std::string& v) {
    c.rl.algorithm = to_enum<Algorithm>(v, {{"ppo", Algorithm::Ppo}, {"scst", Algorithm::Scst}});
  };
  m["rl.iterations"] = [&c](const std::string& v) { c.rl.total_iterations = to_size(v); };
  m["rl.images_per_batch"] = [&c](const std::string& v) { c.rl.images_per_batch = to_size(v); };
  m["rl.samples_per_image"] = [&c](const std::string& v) { c.rl.samples_per_image = to_size(v); };
  m["rl.ppo_epochs"] = [&c](const std::string& v) { c.rl.ppo_epochs = to_size(v); };
  m["rl.clip_eps"] = [&c](const std::string& v) { c.rl.clip_eps = to_double(v); };
  m["rl.lr"] = [&c](const std::string& v) { c.rl.lr = to_double(v); };
  m["rl.grad_clip"] = [&c](const std::string& v) { c.rl.grad_clip_norm = to_double(v); };
  m["rl.nucleus_p"] = [&c](const std::string& v) { c.rl.decode.nucleus_p = to_double(v); };
  m["rl.temperature"] = [&c](const std::string& v) { c.rl.decode.temperature = to_double(v); };
  m["rl.max_len"] = [&c](const std::string& v) { c.rl.decode.max_len = to_size(v); };
  m["rl.probe_size"] = [&c](const std::string& v) { c.rl.probe_size = to_size(v); };
  m["rl.checkpoint_every"] = [&c](const std::string& v) { c.rl.checkpoint_every = to_size(v); };
  m["rl.init_checkpoint"] = path_into(c.init_checkpoint);

  m["eval.judge"] = [&c](const std::string& v) {
    c.eval.judge = to_enum<JudgeKind>(v, {{"lexical", JudgeKind::Lexical}, {"remote", JudgeKind::Remote}});
  };
  endpoint(m, "eval", "judge_", c.eval.judge_endpoint);
  m["eval.concreteness"] = path_into(c.eval.concreteness);
  m["eval.synonyms"] = path_into(c.eval.synonyms);
  m["eval.beam_width"] = [&c](const std::string& v) { c.eval.beam_width = to_size(v); };
  m["eval.max_len"] = [&c](const std::string& v) { c.eval.max_len = to_size(v); };
  m["eval.max_in_flight"] = [&c](const std::string& v) { c.eval.max_in_flight = to_size(v); };
  m["eval.kl_samples"] = [&c](const std::string& v) { c.eval.kl_samples = to_size(v); };
  m["eval.kl_scenes"] = [&c](const std::string& v) { c.eval.kl_scenes = to_size(v); };

  m["sweep.alphas"] = [&c](const std::string& v) {
    c.sweep_alphas.clear();
    for (const auto& item : to_list(v)) c.sweep_alphas.push_back(to_double(item));
  };

  auto& b = c.bench;
  m["bench.seeds"] = path_into(b.seeds);
  m["bench.llm"] = [&b](const std::string& v) {
    b.llm = to_enum<LlmKind>(v, {{"fixture", LlmKind::Fixture}, {"remote", LlmKind::Remote}});
  };
  m["bench.fixture_responses"] = path_into(b.fixture_responses);
  endpoint(m, "bench", "llm_", b.llm_endpoint);
  m["bench.concreteness"] = path_into(b.concreteness);
  m["bench.exclusions"] = path_into(b.exclusions);
  m["bench.rephrase_top_p"] = [&b](const std::string& v) { b.gen.rephrase_top_p = to_double(v); };
  m["bench.rephrase_temperature"] = [&b](const std::string& v) { b.gen.rephrase_temperature = to_double(v); };
  m["bench.fewshot_top_p"] = [&b](const std::string& v) { b.gen.fewshot_top_p = to_double(v); };
  m["bench.fewshot_temperature"] = [&b](const std::string& v) { b.gen.fewshot_temperature = to_double(v); };
  m["bench.shots"] = [&b](const std::string& v) { b.gen.shots = to_size(v); };
  m["bench.rarity_percentile"] = [&b](const std::string& v) { b.gen.rarity_percentile = to_double(v); };
  m["bench.target"] = [&b](const std::string& v) { b.gen.target = to_size(v); };
  m["bench.max_tokens"] = [&b](const std::string& v) { b.gen.max_tokens = to_size(v); };
  m["bench.attempt_factor"] = [&b](const std::string& v) { b.gen.attempt_factor = to_size(v); };
  m["bench.negative_prompt"] = [&b](const std::string& v) { b.gen.negative_prompt = v; };
  m["bench.guidance"] = [&b](const std::string& v) { b.gen.guidance = to_double(v); };
  m["bench.steps"] = [&b](const std::string& v) { b.gen.steps = to_int(v); };
  return m;
}

}  // namespace

std::vector<ConfigEntry> parse_config_entries(std::istream& in, const std::string& source) {
  std::vector<ConfigEntry> out;
  std::string section = "run";
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(where + "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + line + "'");
    ConfigEntry e{section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (e.key.empty()) throw ConfigError(where + "empty key");
    out.push_back(std::move(e));
  }
  return out;
}

std::uint64_t module_seed(std::uint64_t run_seed, std::string_view module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char ch : module) h = (h ^ static_cast<unsigned char>(ch)) * 0x100000001b3ULL;
  return mix64(run_seed ^ mix64(h));
}

void RunConfig::derive_seeds() {
  world.seed = module_seed(seed, "world");
  mle.seed = module_seed(seed, "mle");
  rl.seed = module_seed(seed, "rl");
  bench.gen.seed = module_seed(seed, "bench");
}

void RunConfig::validate() const {
  world.validate();
  if (policy.token_dim == 0 || policy.hidden == 0 || policy.context == 0) {
    throw ConfigError("policy: token_dim, hidden and context must be positive");
  }
  if (mle.batch_size == 0) throw ConfigError("mle: batch_size must be positive");
  if (!(mle.lr >= 0.0)) throw ConfigError("mle: lr must be >= 0");
  if (!(mle.grad_clip_norm > 0.0)) throw ConfigError("mle: grad_clip must be positive");
  reward.validate();
  rl.validate();
  if (scorer == ScorerKind::Remote && (fidelity_endpoint.base_url.empty() || adequacy_endpoint.base_url.empty())) {
    throw ConfigError("reward: scorer = remote needs fidelity_url and adequacy_url");
  }
  if (eval.judge == JudgeKind::Remote && eval.judge_endpoint.base_url.empty()) {
    throw ConfigError("eval: judge = remote needs judge_url");
  }
  if (eval.beam_width == 0) throw ConfigError("eval: beam_width must be positive");
  if (eval.max_len < 2) throw ConfigError("eval: max_len must be at least 2");
  if (eval.max_in_flight == 0) throw ConfigError("eval: max_in_flight must be positive");
  if (sweep_alphas.empty()) throw ConfigError("sweep: alphas is empty");
  for (const double a : sweep_alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("sweep: every alpha must lie in [0,1]");
  }
  if (bench.llm == LlmKind::Remote && bench.llm_endpoint.base_url.empty()) {
    throw ConfigError("bench: llm = remote needs llm_url");
  }
  bench.gen.validate();
}

RunConfig default_run_config(const std::filesystem::path& data_dir) {
  RunConfig c;
  c.world.feature_dim = 128;
  c.world.num_train_scenes = 20000;
  c.world.num_eval_scenes = 1000;
  c.world.train_captions_per_scene = 1;
  c.policy.hidden = 128;
  c.mle.epochs = 8;
  c.mle.lr = 3e-3;
  c.eval.concreteness = data_dir / "concreteness.tsv";
  c.eval.synonyms = data_dir / "chair_synonyms.tsv";
  c.bench.seeds = data_dir / "bench_seeds.txt";
  c.bench.fixture_responses = data_dir / "bench_fixture_responses.txt";
  c.bench.concreteness = data_dir / "concreteness.tsv";
  c.derive_seeds();
  return c;
}

RunConfig parse_run_config(std::istream& in, const std::string& source, const std::filesystem::path& base_dir,
                           const std::filesystem::path& data_dir) {
  std::stringstream text;
  text << in.rdbuf();
  RunConfig c = default_run_config(data_dir);
  c.text = text.str();
  const auto table = setters(c, base_dir);
  std::istringstream body(c.text);
  std::string errors;
  for (const auto& e : parse_config_entries(body, source)) {
    const std::string where = source + ":" + std::to_string(e.line) + ": ";
    const auto it = table.find(e.section + "." + e.key);
    if (it == table.end()) {
      errors += where + "unknown key '" + e.key + "' in [" + e.section + "]\n";
      continue;
    }
    try {
      it->second(e.value);
    } catch (const ConfigError& err) {
      errors += where + e.section + "." + e.key + ": " + err.what() + "\n";
    }
  }
  if (!errors.empty()) {
    errors.pop_back();
    throw ConfigError(errors);
  }
  c.derive_seeds();
  if (!c.bench.exclusions.empty()) c.bench.gen.exclusions = read_lines(c.bench.exclusions);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::filesystem::path& data_dir) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  RunConfig c = parse_run_config(in, path.string(), path.parent_path(), data_dir);
  c.source = path;
  return c;
}

}  // namespace mocha
