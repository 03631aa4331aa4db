#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mocha/policy.hpp"
#include "mocha/remote.hpp"
#include "mocha/synthcap.hpp"

namespace mocha {

inline constexpr double kConcretenessThreshold = 4.5;
inline constexpr double kUnsureWarningFraction = 0.02;

// word or multi-word phrase -> concreteness rating.
class ConcretenessLexicon {
 public:
  ConcretenessLexicon() = default;
  explicit ConcretenessLexicon(std::unordered_map<std::string, double> scores,
                               double threshold = kConcretenessThreshold);

  // Two tab-separated columns: word, score. Lines starting with '#' are skipped.
  static ConcretenessLexicon load(std::istream& in, double threshold = kConcretenessThreshold);
  static ConcretenessLexicon load_file(const std::string& path, double threshold = kConcretenessThreshold);

  std::optional<double> score(const std::string& phrase) const;
  bool contains(const std::string& phrase) const { return scores_.contains(phrase); }
  double threshold() const { return threshold_; }
  std::size_t max_phrase_words() const { return max_words_; }

 private:
  std::unordered_map<std::string, double> scores_;
  double threshold_ = kConcretenessThreshold;
  std::size_t max_words_ = 1;
};

// painting, drawing, photo, picture, portrait, photograph
const std::vector<std::string>& default_ignore_list();

// Lowercase, punctuation stripped, split on whitespace.
std::vector<std::string> normalize_words(std::string_view text);

// Longest lexicon match (bigrams before unigrams) at each position; keeps
// matches rated >= threshold that are not ignored, once per surface form,
// in order of first appearance.
std::vector<std::string> extract_objects(std::string_view caption, const ConcretenessLexicon& lexicon,
                                         std::span<const std::string> ignore = default_ignore_list());

// CHAIR-style synonym table: word or phrase -> one of a fixed category list.
class ChairSynonymMap {
 public:
  ChairSynonymMap() = default;
  // Throws ConfigError when a synonym maps to two categories or to a
  // category outside the list.
  ChairSynonymMap(std::vector<std::string> categories, const std::vector<std::pair<std::string, std::string>>& pairs);

  // Each category is its own only synonym.
  static ChairSynonymMap identity(std::vector<std::string> categories);
  // Two tab-separated columns: word, category. Categories are the distinct
  // second-column values, each also mapping to itself.
  static ChairSynonymMap load(std::istream& in);
  static ChairSynonymMap load_file(const std::string& path);

  std::optional<std::string> canonical(const std::string& word) const;
  const std::vector<std::string>& categories() const { return categories_; }
  std::size_t max_phrase_words() const { return max_words_; }

  struct Mention {
    std::string surface;
    std::string category;
  };
  // Every recognized mention, longest match first, duplicates kept.
  std::vector<Mention> mentions(std::string_view caption) const;

 private:
  std::vector<std::string> categories_;
  std::unordered_map<std::string, std::string> map_;
  std::size_t max_words_ = 1;
};

enum class Verdict { Exists, Hallucinated, Unsure };
std::string_view to_string(Verdict v);

struct JudgeVerdict {
  std::string object;
  Verdict verdict = Verdict::Unsure;
  bool operator==(const JudgeVerdict&) const = default;
};

struct GroundTruth {
  std::string caption;
  std::vector<std::string> objects;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeVerdict judge(const std::string& object, const GroundTruth& gt) = 0;
};

// Exists when the object (or its canonical form under `synonyms`) matches a
// ground-truth object's canonical form. Never Unsure.
JudgeVerdict judge_lexical(const std::string& object, std::span<const std::string> gt_objects,
                           const ChairSynonymMap* synonyms = nullptr);

class LexicalJudge : public Judge {
 public:
  explicit LexicalJudge(const ChairSynonymMap* synonyms = nullptr) : synonyms_(synonyms) {}
  JudgeVerdict judge(const std::string& object, const GroundTruth& gt) override;

 private:
  const ChairSynonymMap* synonyms_;
};

std::string render_judge_prompt(std::string_view caption, std::string_view object);
// First word that is yes/no/unsure (case-insensitive); anything else Unsure.
Verdict parse_judge_response(std::string_view text);

// Wire contract: request {prompt, max_tokens, greedy} -> response {text}.
class RemoteJudge : public Judge {
 public:
  explicit RemoteJudge(std::shared_ptr<JsonTransport> transport, int max_tokens = 8)
      : transport_(std::move(transport)), max_tokens_(max_tokens) {}
  JudgeVerdict judge(const std::string& object, const GroundTruth& gt) override;

 private:
  std::shared_ptr<JsonTransport> transport_;
  int max_tokens_;
};

struct EvalRecord {
  std::string prediction;
  GroundTruth gt;
};

// Line-delimited {prediction, gt_caption, gt_objects}.
std::vector<EvalRecord> load_eval_records(std::istream& in);
void save_eval_records(std::ostream& out, std::span<const EvalRecord> records);

struct OchReport {
  std::size_t n_h = 0;
  std::size_t n_e = 0;
  std::size_t n_unsure = 0;
  double och_rate = 0.0;  // n_h / (n_h + n_e)
  double unsure_fraction = 0.0;
  bool unsure_warning = false;
  std::vector<std::vector<JudgeVerdict>> per_item;

  std::size_t n_tot() const { return n_h + n_e; }
};

// Judge failure mid-evaluation; carries the tally of the records judged so far.
class OchError : public std::runtime_error {
 public:
  OchError(const std::string& what, OchReport partial) : std::runtime_error(what), partial_(std::move(partial)) {}
  const OchReport& partial() const { return partial_; }

 private:
  OchReport partial_;
};

OchReport openchair_eval(std::span<const EvalRecord> records, Judge& judge, const ConcretenessLexicon& lexicon,
                         std::span<const std::string> ignore = default_ignore_list(), std::size_t max_in_flight = 1);

struct ChairRecord {
  std::string prediction;
  std::set<std::string> gt_categories;
};

struct ChairReport {
  double ch_i = 0.0;
  double ch_s = 0.0;
  std::size_t hallucinated_instances = 0;
  std::size_t recognized_instances = 0;
  std::size_t hallucinated_captions = 0;
  std::size_t captions = 0;
};

ChairReport chair_eval(std::span<const ChairRecord> records, const ChairSynonymMap& synonyms);

// Oracle metrics of one decoding pass over a split.
struct PolicyEvalPoint {
  double mean_contradiction = 0.0;  // mean p-bar
  double mean_f1 = 0.0;
  double fidelity = 0.0;  // 1 - 2 mean p-bar
  double adequacy = 0.0;  // 2 mean F1 - 1
  double instance_rate = 0.0;  // hallucinated object mentions / mentions
  double sentence_rate = 0.0;  // captions with >= 1 hallucinated object
  double mean_length = 0.0;    // words
  std::vector<std::string> captions;
};

// Defaults to beam search with 5 beams, top beam.
DecodeConfig eval_decode_config();

PolicyEvalPoint fidelity_adequacy_point(const PolicyParams& policy, std::span<const SceneRecord> split,
                                        const Vocabulary& vocab, const WorldLexicon& lexicon,
                                        const DecodeConfig& decode = eval_decode_config());

// Same metrics for captions that are already decoded (one per scene).
PolicyEvalPoint score_captions(std::span<const std::string> captions, std::span<const SceneRecord> split,
                               const WorldLexicon& lexicon);

}  // namespace mocha
