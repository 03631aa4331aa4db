#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mocha/halleval.hpp"
#include "mocha/remote.hpp"

namespace mocha {

inline constexpr const char* kDefaultNegativePrompt = "unclear, deformed, out of image, disfigured, body out of frame";

// {caption} is replaced by the seed caption.
inline constexpr const char* kDefaultRephraseTemplate =
    "Rephrase the following image caption so that it describes the same scene in different words. "
    "Answer with the new caption only.\nCaption: {caption}\nRephrased caption:";

struct GenConfig {
  double rephrase_top_p = 0.9;
  double rephrase_temperature = 0.6;
  double fewshot_top_p = 1.0;
  double fewshot_temperature = 0.8;
  std::size_t shots = 10;
  double rarity_percentile = 10.0;
  std::size_t target = 5000;
  std::size_t max_tokens = 64;
  // Few-shot calls stop after target * attempt_factor tries.
  std::size_t attempt_factor = 3;
  std::string rephrase_template = kDefaultRephraseTemplate;
  std::string negative_prompt = kDefaultNegativePrompt;
  double guidance = 10.0;
  int steps = 40;
  std::uint64_t seed = 1;
  // Captions removed by manual review, matched after normalization.
  std::vector<std::string> exclusions;

  void validate() const;
};

struct LlmRequest {
  std::string prompt;
  double temperature = 1.0;
  double top_p = 1.0;
  std::size_t max_tokens = 64;

  nlohmann::json to_json() const;
  static LlmRequest from_json(const nlohmann::json& j);
  bool operator==(const LlmRequest&) const = default;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  // Throws ServiceError when no completion can be obtained.
  virtual std::string complete(const LlmRequest& request) = 0;
};

// Wire contract: request {prompt, temperature, top_p, max_tokens} -> {text}.
class RemoteLlmClient : public LlmClient {
 public:
  explicit RemoteLlmClient(std::shared_ptr<JsonTransport> transport) : transport_(std::move(transport)) {}
  std::string complete(const LlmRequest& request) override;

 private:
  std::shared_ptr<JsonTransport> transport_;
};

// Returns canned responses in order, wrapping around.
class FixtureLlmClient : public LlmClient {
 public:
  explicit FixtureLlmClient(std::vector<std::string> responses);
  std::string complete(const LlmRequest& request) override;
  std::size_t calls() const { return calls_; }

 private:
  std::vector<std::string> responses_;
  std::size_t calls_ = 0;
};

// Forwards to `inner` and appends one {request, response} line per call.
class RecordingLlmClient : public LlmClient {
 public:
  RecordingLlmClient(LlmClient& inner, std::ostream& transcript) : inner_(inner), out_(transcript) {}
  std::string complete(const LlmRequest& request) override;

 private:
  LlmClient& inner_;
  std::ostream& out_;
};

// Serves a recorded transcript; each request must equal the next recorded one.
class ReplayLlmClient : public LlmClient {
 public:
  static ReplayLlmClient load(std::istream& transcript);
  std::string complete(const LlmRequest& request) override;
  std::size_t remaining() const { return entries_.size() - next_; }

 private:
  std::vector<std::pair<LlmRequest, std::string>> entries_;
  std::size_t next_ = 0;
};

// One caption per line; blank lines skipped.
std::vector<std::string> load_seed_captions(std::istream& in);

// Object -> number of captions that mention it.
std::map<std::string, std::size_t> object_frequency(std::span<const std::string> captions,
                                                    const ConcretenessLexicon& lexicon);

// Nearest-rank percentile of the per-object counts.
std::size_t rarity_cut(const std::map<std::string, std::size_t>& freq, double percentile);

// Captions with at least one object whose count is <= rarity_cut. Captions
// without objects never survive.
std::vector<std::string> rarity_filter(std::span<const std::string> captions,
                                       const std::map<std::string, std::size_t>& freq, double percentile,
                                       const ConcretenessLexicon& lexicon);

struct GeneratedCaption {
  std::string text;
  std::vector<std::string> shots;  // the prompt's examples
};

struct GenerationResult {
  std::vector<std::string> rephrased;
  std::vector<GeneratedCaption> captions;
  std::vector<LlmRequest> prompts;  // every request, in call order
  std::size_t malformed = 0;
};

// Cleans a completion into a caption; empty when the response is unusable.
std::string clean_completion(const std::string& text);

// Rephrase round over `seeds`, then few-shot rounds drawing `shots` examples
// from seeds plus rephrasings until `target` few-shot captions exist.
GenerationResult generate_captions(std::span<const std::string> seeds, LlmClient& client, const GenConfig& cfg);

struct ImagePrompt {
  std::string positive;
  std::string negative;
  double guidance = 10.0;
  int steps = 40;
};

struct BenchRecord {
  std::string caption;
  std::vector<std::string> objects;
  ImagePrompt image_prompt;
  std::vector<std::string> shots;

  nlohmann::json to_json() const;
};

struct BenchSummary {
  std::size_t records = 0;
  std::size_t candidates = 0;
  std::size_t excluded = 0;
  std::size_t rejected_by_balance = 0;
  std::size_t malformed = 0;
  std::size_t rarity_cut = 0;
  std::map<std::string, std::size_t> histogram;

  std::size_t object_types() const { return histogram.size(); }
  nlohmann::json to_json() const;
};

struct BenchResult {
  std::vector<BenchRecord> records;
  BenchSummary summary;
};

// Greedy balancing with cap = ceil(target / distinct objects seen so far).
BenchResult assemble_bench(std::span<const GeneratedCaption> captions, const ConcretenessLexicon& lexicon,
                           const GenConfig& cfg);

// seeds -> rarity filter -> generation -> rarity filter -> balance.
BenchResult build_bench(std::span<const std::string> seeds, LlmClient& client, const ConcretenessLexicon& lexicon,
                        const GenConfig& cfg);

void write_bench_records(std::ostream& out, std::span<const BenchRecord> records);
// Human-readable histogram, most frequent first.
void write_bench_summary(std::ostream& out, const BenchSummary& summary);

}  // namespace mocha
