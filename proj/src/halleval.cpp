#include "mocha/halleval.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <future>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "mocha/errors.hpp"

namespace mocha {
namespace {

std::string join(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::string trim(std::string s) {
  const auto notspace = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
  s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  return s;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Splits a two-column tab-separated line.
bool split_tsv(const std::string& line, std::string& a, std::string& b) {
  const auto tab = line.find('\t');
  if (tab == std::string::npos) return false;
  a = trim(line.substr(0, tab));
  b = trim(line.substr(tab + 1));
  return !a.empty() && !b.empty();
}

std::size_t word_span(const std::string& phrase) {
  return static_cast<std::size_t>(std::count(phrase.begin(), phrase.end(), ' ')) + 1;
}

}  // namespace

ConcretenessLexicon::ConcretenessLexicon(std::unordered_map<std::string, double> scores, double threshold)
    : scores_(std::move(scores)), threshold_(threshold) {
  for (const auto& [word, s] : scores_) {
    if (!std::isfinite(s)) throw ConfigError("concreteness lexicon: non-finite score for '" + word + "'");
    max_words_ = std::max(max_words_, word_span(word));
  }
}

ConcretenessLexicon ConcretenessLexicon::load(std::istream& in, double threshold) {
  std::unordered_map<std::string, double> scores;
  std::string line, word, value;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    if (!split_tsv(line, word, value)) {
      throw ConfigError("concreteness lexicon: line " + std::to_string(lineno) + ": expected word<TAB>score");
    }
    try {
      std::size_t used = 0;
      const double s = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      scores[lower(word)] = s;
    } catch (const std::exception&) {
      throw ConfigError("concreteness lexicon: line " + std::to_string(lineno) + ": bad score '" + value + "'");
    }
  }
  return ConcretenessLexicon(std::move(scores), threshold);
}

ConcretenessLexicon ConcretenessLexicon::load_file(const std::string& path, double threshold) {
  std::ifstream in(path);
  if (!in) throw ConfigError("concreteness lexicon: cannot open '" + path + "'");
  return load(in, threshold);
}

std::optional<double> ConcretenessLexicon::score(const std::string& phrase) const {
  auto it = scores_.find(phrase);
  if (it == scores_.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::string>& default_ignore_list() {
  static const std::vector<std::string> list = {"painting", "drawing", "photo", "picture", "portrait", "photograph"};
  return list;
}

std::vector<std::string> normalize_words(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    cleaned.push_back(std::isalnum(u) || c == '-' || c == '\'' ? static_cast<char>(std::tolower(u)) : ' ');
  }
  std::vector<std::string> words;
  std::istringstream ss(cleaned);
  std::string w;
  while (ss >> w) words.push_back(w);
  return words;
}

std::vector<std::string> extract_objects(std::string_view caption, const ConcretenessLexicon& lexicon,
                                         std::span<const std::string> ignore) {
  const auto words = normalize_words(caption);
  const std::span<const std::string> all(words);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < words.size()) {
    bool matched = false;
    for (std::size_t len = std::min(lexicon.max_phrase_words(), words.size() - i); len >= 1; --len) {
      const std::string phrase = join(all.subspan(i, len));
      const auto s = lexicon.score(phrase);
      if (!s) continue;
      const bool ignored = std::find(ignore.begin(), ignore.end(), phrase) != ignore.end();
      if (*s >= lexicon.threshold() && !ignored && std::find(out.begin(), out.end(), phrase) == out.end()) {
        out.push_back(phrase);
      }
      i += len;
      matched = true;
      break;
    }
    if (!matched) ++i;
  }
  return out;
}

ChairSynonymMap::ChairSynonymMap(std::vector<std::string> categories,
                                 const std::vector<std::pair<std::string, std::string>>& pairs)
    : categories_(std::move(categories)) {
  std::set<std::string> cats;
  for (const auto& c : categories_) {
    if (!cats.insert(c).second) throw ConfigError("synonym map: duplicate category '" + c + "'");
    map_[c] = c;
    max_words_ = std::max(max_words_, word_span(c));
  }
  for (const auto& [word, cat] : pairs) {
    if (!cats.contains(cat)) throw ConfigError("synonym map: '" + word + "' maps to unknown category '" + cat + "'");
    auto [it, inserted] = map_.emplace(word, cat);
    if (!inserted && it->second != cat) {
      throw ConfigError("synonym map: '" + word + "' maps to both '" + it->second + "' and '" + cat + "'");
    }
    max_words_ = std::max(max_words_, word_span(word));
  }
}

ChairSynonymMap ChairSynonymMap::identity(std::vector<std::string> categories) {
  return ChairSynonymMap(std::move(categories), {});
}

ChairSynonymMap ChairSynonymMap::load(std::istream& in) {
  std::vector<std::string> categories;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line, word, cat;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    if (!split_tsv(line, word, cat)) {
      throw ConfigError("synonym map: line " + std::to_string(lineno) + ": expected word<TAB>category");
    }
    word = lower(word);
    cat = lower(cat);
    if (std::find(categories.begin(), categories.end(), cat) == categories.end()) categories.push_back(cat);
    pairs.emplace_back(word, cat);
  }
  if (categories.empty()) throw ConfigError("synonym map: no entries");
  return ChairSynonymMap(std::move(categories), pairs);
}

ChairSynonymMap ChairSynonymMap::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("synonym map: cannot open '" + path + "'");
  return load(in);
}

std::optional<std::string> ChairSynonymMap::canonical(const std::string& word) const {
  auto it = map_.find(word);
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

std::vector<ChairSynonymMap::Mention> ChairSynonymMap::mentions(std::string_view caption) const {
  const auto words = normalize_words(caption);
  const std::span<const std::string> all(words);
  std::vector<Mention> out;
  std::size_t i = 0;
  while (i < words.size()) {
    bool matched = false;
    for (std::size_t len = std::min(max_words_, words.size() - i); len >= 1; --len) {
      std::string phrase = join(all.subspan(i, len));
      auto it = map_.find(phrase);
      if (it == map_.end()) continue;
      out.push_back({std::move(phrase), it->second});
      i += len;
      matched = true;
      break;
    }
    if (!matched) ++i;
  }
  return out;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Exists:
      return "exists";
    case Verdict::Hallucinated:
      return "hallucinated";
    case Verdict::Unsure:
      return "unsure";
  }
  return "unsure";
}

JudgeVerdict judge_lexical(const std::string& object, std::span<const std::string> gt_objects,
                           const ChairSynonymMap* synonyms) {
  const auto canon = [&](const std::string& w) {
    if (synonyms != nullptr) {
      if (auto c = synonyms->canonical(w)) return *c;
    }
    return w;
  };
  const std::string target = canon(object);
  const bool found =
      std::any_of(gt_objects.begin(), gt_objects.end(), [&](const std::string& g) { return canon(g) == target; });
  return {object, found ? Verdict::Exists : Verdict::Hallucinated};
}

JudgeVerdict LexicalJudge::judge(const std::string& object, const GroundTruth& gt) {
  return judge_lexical(object, gt.objects, synonyms_);
}

std::string render_judge_prompt(std::string_view caption, std::string_view object) {
  std::string p = "<s>[INST] An image has the following caption: \"";
  p += caption;
  p += "\".\nDoes the image contain the following object? \"";
  p += object;
  p += "\".\nAnswer yes/no/unsure.\nThe answer is: [/INST]";
  return p;
}

Verdict parse_judge_response(std::string_view text) {
  std::string word;
  auto classify = [](const std::string& w) -> std::optional<Verdict> {
    if (w == "yes") return Verdict::Exists;
    if (w == "no") return Verdict::Hallucinated;
    if (w == "unsure") return Verdict::Unsure;
    return std::nullopt;
  };
  for (std::size_t i = 0; i <= text.size(); ++i) {
    const bool alpha = i < text.size() && std::isalpha(static_cast<unsigned char>(text[i]));
    if (alpha) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
      continue;
    }
    if (auto v = classify(word)) return *v;
    word.clear();
  }
  return Verdict::Unsure;
}

JudgeVerdict RemoteJudge::judge(const std::string& object, const GroundTruth& gt) {
  const nlohmann::json request{
      {"prompt", render_judge_prompt(gt.caption, object)}, {"max_tokens", max_tokens_}, {"greedy", true}};
  const auto response = transport_->post(request);
  if (!response.is_object() || !response.contains("text") || !response["text"].is_string()) {
    throw ServiceError("remote judge: response lacks a string 'text'");
  }
  return {object, parse_judge_response(response["text"].get<std::string>())};
}

std::vector<EvalRecord> load_eval_records(std::istream& in) {
  std::vector<EvalRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalRecord r;
      r.prediction = j.at("prediction").get<std::string>();
      r.gt.caption = j.value("gt_caption", std::string());
      r.gt.objects = j.value("gt_objects", std::vector<std::string>());
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("eval records: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void save_eval_records(std::ostream& out, std::span<const EvalRecord> records) {
  for (const auto& r : records) {
    out << nlohmann::json{{"prediction", r.prediction}, {"gt_caption", r.gt.caption}, {"gt_objects", r.gt.objects}}
               .dump()
        << '\n';
  }
}

namespace {

void finalize(OchReport& report) {
  const std::size_t decided = report.n_h + report.n_e;
  const std::size_t all = decided + report.n_unsure;
  report.och_rate = decided > 0 ? static_cast<double>(report.n_h) / static_cast<double>(decided) : 0.0;
  report.unsure_fraction = all > 0 ? static_cast<double>(report.n_unsure) / static_cast<double>(all) : 0.0;
  report.unsure_warning = all > 0 && report.unsure_fraction >= kUnsureWarningFraction;
}

void tally(OchReport& report, std::vector<JudgeVerdict> verdicts) {
  for (const auto& v : verdicts) {
    switch (v.verdict) {
      case Verdict::Exists:
        ++report.n_e;
        break;
      case Verdict::Hallucinated:
        ++report.n_h;
        break;
      case Verdict::Unsure:
        ++report.n_unsure;
        break;
    }
  }
  report.per_item.push_back(std::move(verdicts));
}

}  // namespace

OchReport openchair_eval(std::span<const EvalRecord> records, Judge& judge, const ConcretenessLexicon& lexicon,
                         std::span<const std::string> ignore, std::size_t max_in_flight) {
  if (records.empty()) throw ConfigError("openchair_eval: no records");
  max_in_flight = std::max<std::size_t>(1, max_in_flight);
  OchReport report;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    const auto objects = extract_objects(rec.prediction, lexicon, ignore);
    std::vector<JudgeVerdict> verdicts(objects.size());
    try {
      for (std::size_t start = 0; start < objects.size(); start += max_in_flight) {
        const std::size_t end = std::min(objects.size(), start + max_in_flight);
        if (max_in_flight == 1) {
          verdicts[start] = judge.judge(objects[start], rec.gt);
          continue;
        }
        std::vector<std::future<JudgeVerdict>> pending;
        for (std::size_t k = start; k < end; ++k) {
          pending.push_back(std::async(std::launch::async, [&, k] { return judge.judge(objects[k], rec.gt); }));
        }
        for (std::size_t k = start; k < end; ++k) verdicts[k] = pending[k - start].get();
      }
    } catch (const std::exception& e) {
      finalize(report);
      throw OchError("openchair_eval: record " + std::to_string(r) + ": " + e.what(), report);
    }
    tally(report, std::move(verdicts));
  }
  finalize(report);
  return report;
}

ChairReport chair_eval(std::span<const ChairRecord> records, const ChairSynonymMap& synonyms) {
  ChairReport report;
  for (const auto& rec : records) {
    bool any = false;
    for (const auto& m : synonyms.mentions(rec.prediction)) {
      ++report.recognized_instances;
      if (!rec.gt_categories.contains(m.category)) {
        ++report.hallucinated_instances;
        any = true;
      }
    }
    ++report.captions;
    report.hallucinated_captions += any ? 1 : 0;
  }
  if (report.recognized_instances > 0) {
    report.ch_i = static_cast<double>(report.hallucinated_instances) / static_cast<double>(report.recognized_instances);
  }
  if (report.captions > 0) {
    report.ch_s = static_cast<double>(report.hallucinated_captions) / static_cast<double>(report.captions);
  }
  return report;
}

DecodeConfig eval_decode_config() {
  DecodeConfig cfg;
  cfg.mode = DecodeMode::Beam;
  cfg.beam_width = 5;
  return cfg;
}

PolicyEvalPoint score_captions(std::span<const std::string> captions, std::span<const SceneRecord> split,
                               const WorldLexicon& lexicon) {
  if (captions.size() != split.size()) throw ConfigError("score_captions: one caption per scene required");
  PolicyEvalPoint pt;
  std::size_t mentions = 0, hallucinated = 0, bad_captions = 0, words = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& scene = split[i].scene;
    const FactSet facts = parse_facts(captions[i], lexicon);
    pt.mean_contradiction += oracle_contradiction(facts, scene);
    pt.mean_f1 += oracle_adequacy(facts, scene);
    bool any = false;
    for (const auto& f : facts) {
      ++mentions;
      if (is_hallucinated(f, scene)) {
        ++hallucinated;
        any = true;
      }
    }
    bad_captions += any ? 1 : 0;
    words += split_words(captions[i]).size();
    pt.captions.push_back(captions[i]);
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, split.size()));
  pt.mean_contradiction /= n;
  pt.mean_f1 /= n;
  pt.fidelity = 1.0 - 2.0 * pt.mean_contradiction;
  pt.adequacy = 2.0 * pt.mean_f1 - 1.0;
  pt.instance_rate = mentions > 0 ? static_cast<double>(hallucinated) / static_cast<double>(mentions) : 0.0;
  pt.sentence_rate = static_cast<double>(bad_captions) / n;
  pt.mean_length = static_cast<double>(words) / n;
  return pt;
}

PolicyEvalPoint fidelity_adequacy_point(const PolicyParams& policy, std::span<const SceneRecord> split,
                                        const Vocabulary& vocab, const WorldLexicon& lexicon,
                                        const DecodeConfig& decode) {
  std::vector<std::string> captions;
  captions.reserve(split.size());
  Rng rng(0);
  for (const auto& rec : split) {
    captions.push_back(mocha::decode(decode_one(policy, rec.scene.features, decode, rng), vocab));
  }
  return score_captions(captions, split, lexicon);
}

}  // namespace mocha
