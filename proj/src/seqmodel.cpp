#include "mocha/seqmodel.hpp"

#include <array>
#include <cctype>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "mocha/errors.hpp"

namespace mocha {
namespace {

constexpr std::array<std::string_view, Vocabulary::kNumSpecial> kSpecials = {"<bos>", "<eos>", "<pad>",
                                                                              "<unk>"};

}  // namespace

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  tokens_.reserve(kNumSpecial + words.size());
  for (auto s : kSpecials) tokens_.emplace_back(s);
  tokens_.insert(tokens_.end(), words.begin(), words.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw ConfigError("vocabulary: empty token at index " + std::to_string(i));
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) throw ConfigError("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < kNumSpecial) throw ConfigError("vocabulary file: missing reserved tokens");
  for (std::size_t i = 0; i < kNumSpecial; ++i) {
    if (lines[i] != kSpecials[i]) {
      throw ConfigError("vocabulary file: line " + std::to_string(i + 1) + " must be " + std::string(kSpecials[i]));
    }
  }
  return Vocabulary(std::vector<std::string>(lines.begin() + kNumSpecial, lines.end()));
}

void Vocabulary::save(std::ostream& out) const {
  for (const auto& t : tokens_) out << t << '\n';
}

bool Vocabulary::contains(std::string_view word) const { return index_.contains(std::string(word)); }

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (!valid(id)) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

TokenSeq encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("encode: max_len must be at least 2");
  const auto words = split_words(text);
  TokenSeq seq;
  seq.ids.push_back(Vocabulary::kBos);
  for (const auto& w : words) {
    if (seq.ids.size() == max_len) break;
    seq.ids.push_back(vocab.id(w));
  }
  if (seq.ids.size() == words.size() + 1 && seq.ids.size() < max_len) {
    seq.ids.push_back(Vocabulary::kEos);
    seq.terminated = true;
  }
  return seq;
}

std::vector<std::string> decode_words(const TokenSeq& seq, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (TokenId id : seq.ids) {
    if (id == Vocabulary::kBos || id == Vocabulary::kEos || id == Vocabulary::kPad) continue;
    words.push_back(vocab.token(id));
  }
  return words;
}

std::string decode(const TokenSeq& seq, const Vocabulary& vocab) {
  std::string out;
  for (const auto& w : decode_words(seq, vocab)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::size_t word_count(const TokenSeq& seq) {
  std::size_t n = 0;
  for (TokenId id : seq.ids) n += static_cast<std::size_t>(id >= static_cast<TokenId>(Vocabulary::kNumSpecial) || id == Vocabulary::kUnk);
  return n;
}

void validate(const TokenSeq& seq, const Vocabulary& vocab, std::size_t max_len) {
  if (seq.ids.empty() || seq.ids.front() != Vocabulary::kBos) throw ConfigError("token sequence must start with BOS");
  if (seq.ids.size() > max_len) throw ConfigError("token sequence longer than max_len");
  std::size_t eos = 0;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const TokenId id = seq.ids[i];
    if (!vocab.valid(id)) throw ConfigError("token id " + std::to_string(id) + " outside vocabulary");
    if (id == Vocabulary::kPad && i + 1 != seq.ids.size()) throw ConfigError("PAD before final position");
    if (id == Vocabulary::kBos && i != 0) throw ConfigError("BOS after first position");
    if (id == Vocabulary::kEos) {
      ++eos;
      if (i + 1 != seq.ids.size()) throw ConfigError("EOS before final position");
    }
  }
  if (eos > 1) throw ConfigError("more than one EOS");
  if (seq.terminated != (seq.ids.back() == Vocabulary::kEos)) throw ConfigError("terminated flag disagrees with EOS");
}

std::string to_string(const Fact& fact) {
  return fact.attribute ? *fact.attribute + " " + fact.object : fact.object;
}

FactSet parse_facts(std::span<const std::string> words, const WorldLexicon& lexicon) {
  FactSet facts;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!lexicon.objects.contains(words[i])) continue;
    Fact fact{words[i], std::nullopt};
    if (i > 0 && lexicon.attributes.contains(words[i - 1])) fact.attribute = words[i - 1];
    facts.insert(std::move(fact));
  }
  return facts;
}

FactSet parse_facts(std::string_view text, const WorldLexicon& lexicon) {
  const auto words = split_words(text);
  return parse_facts(std::span<const std::string>(words), lexicon);
}

FactSet parse_facts(const TokenSeq& seq, const Vocabulary& vocab, const WorldLexicon& lexicon) {
  const auto words = decode_words(seq, vocab);
  return parse_facts(std::span<const std::string>(words), lexicon);
}

}  // namespace mocha
