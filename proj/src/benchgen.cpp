#include "mocha/benchgen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

#include "mocha/errors.hpp"
#include "mocha/rng.hpp"

namespace mocha {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string normalized(std::string_view text) {
  std::string out;
  for (const auto& w : normalize_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::string fewshot_prompt(std::span<const std::string> shots) {
  std::string p;
  for (const auto& s : shots) p += "Caption: " + s + "\n";
  p += "Caption:";
  return p;
}

std::string rephrase_prompt(const std::string& tmpl, const std::string& caption) {
  std::string out = tmpl;
  const std::string key = "{caption}";
  for (std::size_t pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + caption.size())) {
    out.replace(pos, key.size(), caption);
  }
  return out;
}

}  // namespace

void GenConfig::validate() const {
  if (!(rarity_percentile > 0.0 && rarity_percentile <= 100.0)) {
    throw ConfigError("bench: rarity_percentile must lie in (0,100]");
  }
  if (shots < 1) throw ConfigError("bench: shots must be at least 1");
  for (double p : {rephrase_top_p, fewshot_top_p}) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("bench: top_p must lie in (0,1]");
  }
  for (double t : {rephrase_temperature, fewshot_temperature}) {
    if (!(t > 0.0)) throw ConfigError("bench: temperatures must be positive");
  }
  if (attempt_factor < 1) throw ConfigError("bench: attempt_factor must be at least 1");
  if (steps < 1 || !(guidance > 0.0)) throw ConfigError("bench: guidance and steps must be positive");
  if (rephrase_template.find("{caption}") == std::string::npos) {
    throw ConfigError("bench: rephrase_template must contain {caption}");
  }
}

nlohmann::json LlmRequest::to_json() const {
  return {{"prompt", prompt}, {"temperature", temperature}, {"top_p", top_p}, {"max_tokens", max_tokens}};
}

LlmRequest LlmRequest::from_json(const nlohmann::json& j) {
  LlmRequest r;
  r.prompt = j.at("prompt").get<std::string>();
  r.temperature = j.at("temperature").get<double>();
  r.top_p = j.at("top_p").get<double>();
  r.max_tokens = j.at("max_tokens").get<std::size_t>();
  return r;
}

std::string RemoteLlmClient::complete(const LlmRequest& request) {
  const auto response = transport_->post(request.to_json());
  if (!response.is_object() || !response.contains("text") || !response["text"].is_string()) {
    throw ServiceError("llm: response lacks a string 'text'");
  }
  return response["text"].get<std::string>();
}

FixtureLlmClient::FixtureLlmClient(std::vector<std::string> responses) : responses_(std::move(responses)) {
  if (responses_.empty()) throw ConfigError("fixture llm: no canned responses");
}

std::string FixtureLlmClient::complete(const LlmRequest&) { return responses_[calls_++ % responses_.size()]; }

std::string RecordingLlmClient::complete(const LlmRequest& request) {
  std::string text = inner_.complete(request);
  out_ << nlohmann::json{{"request", request.to_json()}, {"response", text}}.dump() << '\n';
  return text;
}

ReplayLlmClient ReplayLlmClient::load(std::istream& transcript) {
  ReplayLlmClient client;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(transcript, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      client.entries_.emplace_back(LlmRequest::from_json(j.at("request")), j.at("response").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("transcript line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return client;
}

std::string ReplayLlmClient::complete(const LlmRequest& request) {
  if (next_ >= entries_.size()) {
    throw ServiceError("replay: transcript exhausted after " + std::to_string(entries_.size()) + " calls");
  }
  const auto& [recorded, text] = entries_[next_];
  if (!(recorded == request)) {
    throw ServiceError("replay: request " + std::to_string(next_) + " differs from the transcript");
  }
  ++next_;
  return text;
}

std::vector<std::string> load_seed_captions(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::map<std::string, std::size_t> object_frequency(std::span<const std::string> captions,
                                                    const ConcretenessLexicon& lexicon) {
  std::map<std::string, std::size_t> freq;
  for (const auto& c : captions) {
    for (const auto& o : extract_objects(c, lexicon)) ++freq[o];
  }
  return freq;
}

std::size_t rarity_cut(const std::map<std::string, std::size_t>& freq, double percentile) {
  if (freq.empty()) throw ConfigError("rarity filter: corpus has no objects");
  if (!(percentile > 0.0 && percentile <= 100.0)) throw ConfigError("rarity filter: percentile must lie in (0,100]");
  std::vector<std::size_t> counts;
  counts.reserve(freq.size());
  for (const auto& [_, n] : freq) counts.push_back(n);
  std::sort(counts.begin(), counts.end());
  const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(counts.size())));
  return counts[std::clamp<std::size_t>(rank, 1, counts.size()) - 1];
}

std::vector<std::string> rarity_filter(std::span<const std::string> captions,
                                       const std::map<std::string, std::size_t>& freq, double percentile,
                                       const ConcretenessLexicon& lexicon) {
  if (captions.empty()) throw ConfigError("rarity filter: empty corpus");
  const std::size_t cut = rarity_cut(freq, percentile);
  std::vector<std::string> out;
  for (const auto& c : captions) {
    const auto objects = extract_objects(c, lexicon);
    const bool rare = std::any_of(objects.begin(), objects.end(), [&](const std::string& o) {
      const auto it = freq.find(o);
      return it != freq.end() && it->second <= cut;
    });
    if (rare) out.push_back(c);
  }
  return out;
}

std::string clean_completion(const std::string& text) {
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string line = trim(std::string_view(text).substr(pos, nl == std::string::npos ? std::string::npos : nl - pos));
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    if (line.empty()) continue;
    const std::string prefix = "caption:";
    if (line.size() >= prefix.size()) {
      std::string head = line.substr(0, prefix.size());
      std::transform(head.begin(), head.end(), head.begin(), [](unsigned char c) { return std::tolower(c); });
      if (head == prefix) line = trim(line.substr(prefix.size()));
    }
    while (line.size() >= 2 && line.front() == '"' && line.back() == '"') line = trim(line.substr(1, line.size() - 2));
    const bool has_letter = std::any_of(line.begin(), line.end(), [](unsigned char c) { return std::isalpha(c); });
    return has_letter ? line : std::string();
  }
  return {};
}

GenerationResult generate_captions(std::span<const std::string> seeds, LlmClient& client, const GenConfig& cfg) {
  cfg.validate();
  GenerationResult result;
  if (cfg.target == 0) return result;
  if (seeds.empty()) throw ConfigError("generate: no seed captions");

  for (const auto& seed : seeds) {
    LlmRequest req{rephrase_prompt(cfg.rephrase_template, seed), cfg.rephrase_temperature, cfg.rephrase_top_p,
                   cfg.max_tokens};
    result.prompts.push_back(req);
    std::string text = clean_completion(client.complete(req));
    if (text.empty()) {
      ++result.malformed;
    } else {
      result.rephrased.push_back(std::move(text));
    }
  }

  std::vector<std::string> pool(seeds.begin(), seeds.end());
  pool.insert(pool.end(), result.rephrased.begin(), result.rephrased.end());
  Rng rng = Rng::derive(cfg.seed, 0xbe9c);
  std::vector<std::size_t> order(pool.size());
  const std::size_t max_attempts = cfg.target * cfg.attempt_factor;
  for (std::size_t attempt = 0; attempt < max_attempts && result.captions.size() < cfg.target; ++attempt) {
    // Distinct examples when the pool allows it (partial Fisher-Yates).
    std::vector<std::string> shots;
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t k = 0; k < cfg.shots; ++k) {
      if (k < order.size()) {
        std::swap(order[k], order[k + rng.index(order.size() - k)]);
        shots.push_back(pool[order[k]]);
      } else {
        shots.push_back(pool[rng.index(pool.size())]);
      }
    }
    LlmRequest req{fewshot_prompt(shots), cfg.fewshot_temperature, cfg.fewshot_top_p, cfg.max_tokens};
    result.prompts.push_back(req);
    std::string text = clean_completion(client.complete(req));
    if (text.empty()) {
      ++result.malformed;
      continue;
    }
    result.captions.push_back({std::move(text), std::move(shots)});
  }
  return result;
}

nlohmann::json BenchRecord::to_json() const {
  return {{"caption", caption},
          {"objects", objects},
          {"image_prompt",
           {{"positive", image_prompt.positive},
            {"negative", image_prompt.negative},
            {"guidance", image_prompt.guidance},
            {"steps", image_prompt.steps}}},
          {"provenance", {{"round", "fewshot"}, {"shots", shots}}}};
}

nlohmann::json BenchSummary::to_json() const {
  return {{"records", records},
          {"candidates", candidates},
          {"excluded", excluded},
          {"rejected_by_balance", rejected_by_balance},
          {"malformed", malformed},
          {"rarity_cut", rarity_cut},
          {"object_types", object_types()},
          {"histogram", histogram}};
}

BenchResult assemble_bench(std::span<const GeneratedCaption> captions, const ConcretenessLexicon& lexicon,
                           const GenConfig& cfg) {
  BenchResult result;
  result.summary.candidates = captions.size();
  std::set<std::string> excluded;
  for (const auto& e : cfg.exclusions) excluded.insert(normalized(e));
  std::set<std::string> seen;
  std::map<std::string, std::size_t> counts;
  for (const auto& cand : captions) {
    if (result.records.size() >= cfg.target) break;
    if (excluded.contains(normalized(cand.text))) {
      ++result.summary.excluded;
      continue;
    }
    auto objects = extract_objects(cand.text, lexicon);
    if (objects.empty()) continue;
    seen.insert(objects.begin(), objects.end());
    const std::size_t cap = (cfg.target + seen.size() - 1) / seen.size();
    const bool fits = std::all_of(objects.begin(), objects.end(), [&](const std::string& o) { return counts[o] < cap; });
    if (!fits) {
      ++result.summary.rejected_by_balance;
      continue;
    }
    for (const auto& o : objects) ++counts[o];
    BenchRecord rec;
    rec.caption = cand.text;
    rec.objects = std::move(objects);
    rec.image_prompt = {cand.text, cfg.negative_prompt, cfg.guidance, cfg.steps};
    rec.shots = cand.shots;
    result.records.push_back(std::move(rec));
  }
  for (const auto& [o, n] : counts) {
    if (n > 0) result.summary.histogram[o] = n;
  }
  result.summary.records = result.records.size();
  return result;
}

BenchResult build_bench(std::span<const std::string> seeds, LlmClient& client, const ConcretenessLexicon& lexicon,
                        const GenConfig& cfg) {
  cfg.validate();
  if (seeds.empty()) throw ConfigError("bench: no seed captions");
  const auto seed_freq = object_frequency(seeds, lexicon);
  const auto rare_seeds = rarity_filter(seeds, seed_freq, cfg.rarity_percentile, lexicon);
  if (rare_seeds.empty()) throw ConfigError("bench: no seed caption survives the rarity filter");

  const GenerationResult gen = generate_captions(rare_seeds, client, cfg);
  std::vector<std::string> texts;
  for (const auto& c : gen.captions) texts.push_back(c.text);
  std::vector<GeneratedCaption> rare;
  std::size_t cut = 0;
  const auto freq = object_frequency(texts, lexicon);
  if (!freq.empty()) {
    cut = rarity_cut(freq, cfg.rarity_percentile);
    const auto kept = rarity_filter(texts, freq, cfg.rarity_percentile, lexicon);
    // rarity_filter preserves order, so a merge walk recovers the shots.
    std::size_t k = 0;
    for (const auto& c : gen.captions) {
      if (k < kept.size() && c.text == kept[k]) {
        rare.push_back(c);
        ++k;
      }
    }
  }
  BenchResult result = assemble_bench(rare, lexicon, cfg);
  result.summary.candidates = gen.captions.size();
  result.summary.malformed = gen.malformed;
  result.summary.rarity_cut = cut;
  return result;
}

void write_bench_records(std::ostream& out, std::span<const BenchRecord> records) {
  for (const auto& r : records) out << r.to_json().dump() << '\n';
}

void write_bench_summary(std::ostream& out, const BenchSummary& s) {
  out << "records            " << s.records << '\n'
      << "candidates         " << s.candidates << '\n'
      << "malformed          " << s.malformed << '\n'
      << "excluded           " << s.excluded << '\n'
      << "rejected (balance) " << s.rejected_by_balance << '\n'
      << "rarity cut         " << s.rarity_cut << '\n'
      << "object types       " << s.object_types() << '\n';
  std::vector<std::pair<std::string, std::size_t>> rows(s.histogram.begin(), s.histogram.end());
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [o, n] : rows) out << "  " << o << '\t' << n << '\n';
}

}  // namespace mocha
