#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace mocha {

using TokenId = std::int32_t;

inline constexpr std::size_t kDefaultMaxLen = 40;

// Word-level vocabulary. Indices 0..3 are always BOS, EOS, PAD, UNK.
class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kNumSpecial = 4;

  // `words` excludes the reserved tokens; duplicates are rejected.
  explicit Vocabulary(const std::vector<std::string>& words = {});

  // One token per line, reserved tokens first in the order BOS, EOS, PAD, UNK.
  static Vocabulary load(std::istream& in);
  void save(std::ostream& out) const;

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view word) const;
  // UNK for unknown words.
  TokenId id(std::string_view word) const;
  // Throws std::out_of_range for invalid ids.
  const std::string& token(TokenId id) const;
  bool valid(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }
  // Tokens the policy may emit: everything except BOS, PAD, UNK.
  static bool emittable(TokenId id) { return id != kBos && id != kPad && id != kUnk; }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenSeq {
  std::vector<TokenId> ids;
  // True when the sequence ends with EOS; false when cut at the length cap.
  bool terminated = false;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSeq&) const = default;
};

// Lowercased whitespace tokenization.
std::vector<std::string> split_words(std::string_view text);

// BOS + words (+ EOS when the whole sequence fits within max_len ids).
TokenSeq encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len = kDefaultMaxLen);
// Words of the sequence, reserved tokens dropped.
std::vector<std::string> decode_words(const TokenSeq& seq, const Vocabulary& vocab);
std::string decode(const TokenSeq& seq, const Vocabulary& vocab);
// Number of non-reserved tokens.
std::size_t word_count(const TokenSeq& seq);

// Throws ConfigError when the sequence violates the TokenSeq invariants.
void validate(const TokenSeq& seq, const Vocabulary& vocab, std::size_t max_len = kDefaultMaxLen);

struct Fact {
  std::string object;
  std::optional<std::string> attribute;

  auto operator<=>(const Fact&) const = default;
  bool operator==(const Fact&) const = default;
};

using FactSet = std::set<Fact>;

std::string to_string(const Fact& fact);

// Object and attribute words of a captioning world.
struct WorldLexicon {
  std::unordered_set<std::string> objects;
  std::unordered_set<std::string> attributes;
};

// Every object word yields a fact; an attribute word immediately before it
// becomes its attribute. Everything else is ignored.
FactSet parse_facts(std::span<const std::string> words, const WorldLexicon& lexicon);
FactSet parse_facts(std::string_view text, const WorldLexicon& lexicon);
FactSet parse_facts(const TokenSeq& seq, const Vocabulary& vocab, const WorldLexicon& lexicon);

}  // namespace mocha
