#include <algorithm>
#include <atomic>
#include <sstream>

#include "doctest.h"
#include "mocha/errors.hpp"
#include "mocha/halleval.hpp"

using namespace mocha;

namespace {

ConcretenessLexicon fixture_lexicon() {
  return ConcretenessLexicon({{"dog", 4.9},
                              {"cat", 4.9},
                              {"table", 4.9},
                              {"pine cone", 4.9},
                              {"cone", 4.8},
                              {"pine", 4.6},
                              {"duck", 4.9},
                              {"goose", 4.9},
                              {"bird", 4.9},
                              {"guitar", 4.9},
                              {"photograph", 4.9},
                              {"picture", 4.8},
                              {"idea", 1.6},
                              {"red", 3.9},
                              {"sky", 4.5},
                              {"hot dog", 4.8}});
}

ChairSynonymMap bird_map() {
  return ChairSynonymMap({"bird", "dog", "cat", "dining table"},
                         {{"duck", "bird"}, {"goose", "bird"}, {"puppy", "dog"}, {"table", "dining table"}});
}

class ScriptedJudge : public Judge {
 public:
  explicit ScriptedJudge(std::map<std::string, Verdict> verdicts) : verdicts_(std::move(verdicts)) {}
  JudgeVerdict judge(const std::string& object, const GroundTruth&) override {
    ++calls;
    return {object, verdicts_.at(object)};
  }
  std::atomic<int> calls{0};

 private:
  std::map<std::string, Verdict> verdicts_;
};

class FakeTransport : public JsonTransport {
 public:
  explicit FakeTransport(nlohmann::json reply) : reply_(std::move(reply)) {}
  nlohmann::json post(const nlohmann::json& request) override {
    last = request;
    return reply_;
  }
  nlohmann::json last;

 private:
  nlohmann::json reply_;
};

class DownTransport : public JsonTransport {
 public:
  nlohmann::json post(const nlohmann::json&) override { throw ServiceError("connection refused"); }
};

// Brute-force CHAIR tally written against the definition.
ChairReport hand_chair(const std::vector<ChairRecord>& recs, const std::map<std::string, std::string>& table) {
  ChairReport r;
  for (const auto& rec : recs) {
    const auto words = normalize_words(rec.prediction);
    bool any = false;
    for (std::size_t i = 0; i < words.size();) {
      std::string cat;
      std::size_t used = 0;
      if (i + 1 < words.size() && table.contains(words[i] + " " + words[i + 1])) {
        cat = table.at(words[i] + " " + words[i + 1]);
        used = 2;
      } else if (table.contains(words[i])) {
        cat = table.at(words[i]);
        used = 1;
      }
      if (used == 0) {
        ++i;
        continue;
      }
      ++r.recognized_instances;
      if (!rec.gt_categories.contains(cat)) {
        ++r.hallucinated_instances;
        any = true;
      }
      i += used;
    }
    ++r.captions;
    r.hallucinated_captions += any ? 1 : 0;
  }
  return r;
}

}  // namespace

TEST_CASE("object extraction examples") {
  const auto lex = fixture_lexicon();
  CHECK(extract_objects("a photograph of a dog", lex) == std::vector<std::string>{"dog"});
  CHECK(extract_objects("", lex).empty());
  CHECK(extract_objects("pine cone on a table", lex) == std::vector<std::string>{"pine cone", "table"});
  CHECK(extract_objects("A dog, a DOG and a cat.", lex) == std::vector<std::string>{"dog", "cat"});
  CHECK(extract_objects("an idea under the red sky", lex) == std::vector<std::string>{"sky"});  // 4.5 is kept
  CHECK(extract_objects("a picture of a hot dog", lex) == std::vector<std::string>{"hot dog"});
  const std::vector<std::string> none;
  CHECK(extract_objects("a photograph of a dog", lex, none) == std::vector<std::string>{"photograph", "dog"});
}

TEST_CASE("longest-match extraction agrees with an exhaustive matcher") {
  const auto lex = fixture_lexicon();
  const std::vector<std::string> words{"pine", "cone", "dog", "hot", "a", "table"};
  // All strings of up to 4 words; the exhaustive matcher tries every
  // segmentation and keeps the one with the fewest, then leftmost-longest, pieces.
  for (std::size_t len = 0; len <= 4; ++len) {
    std::vector<std::size_t> idx(len, 0);
    while (true) {
      std::vector<std::string> ws;
      for (auto i : idx) ws.push_back(words[i]);
      std::string text;
      for (const auto& w : ws) text += w + " ";
      // Greedy leftmost-longest reference.
      std::vector<std::string> expect;
      for (std::size_t i = 0; i < ws.size();) {
        std::string hit;
        std::size_t used = 1;
        if (i + 1 < ws.size() && lex.contains(ws[i] + " " + ws[i + 1])) {
          hit = ws[i] + " " + ws[i + 1];
          used = 2;
        } else if (lex.contains(ws[i])) {
          hit = ws[i];
        }
        if (!hit.empty() && *lex.score(hit) >= 4.5 && std::find(expect.begin(), expect.end(), hit) == expect.end()) {
          expect.push_back(hit);
        }
        i += used;
      }
      CHECK(extract_objects(text, lex) == expect);
      std::size_t k = 0;
      while (k < len && ++idx[k] == words.size()) idx[k++] = 0;
      if (k == len) break;
    }
  }
}

TEST_CASE("lexicon and synonym loading") {
  std::istringstream tsv("# word\tscore\ndog\t4.9\npine cone\t4.7\nidea\t1.6\n");
  const auto lex = ConcretenessLexicon::load(tsv);
  CHECK(lex.score("pine cone") == 4.7);
  CHECK(lex.max_phrase_words() == 2);
  std::istringstream bad("dog\tnot-a-number\n");
  CHECK_THROWS_AS(ConcretenessLexicon::load(bad), ConfigError);
  CHECK_THROWS_AS(ConcretenessLexicon::load_file("/nonexistent/lexicon.tsv"), ConfigError);

  std::istringstream syn("duck\tbird\ngoose\tbird\nhot dog\thot dog\n");
  const auto map = ChairSynonymMap::load(syn);
  CHECK(map.canonical("duck") == "bird");
  CHECK(map.canonical("bird") == "bird");
  CHECK(map.canonical("swan") == std::nullopt);
  CHECK(map.categories().size() == 2);
  CHECK_THROWS_AS(ChairSynonymMap({"bird", "dog"}, {{"duck", "bird"}, {"duck", "dog"}}), ConfigError);
  CHECK_THROWS_AS(ChairSynonymMap({"bird"}, {{"duck", "fowl"}}), ConfigError);
}

TEST_CASE("lexical judge examples") {
  const auto map = bird_map();
  CHECK(judge_lexical("dog", std::vector<std::string>{"dog"}).verdict == Verdict::Exists);
  CHECK(judge_lexical("guitar", std::vector<std::string>{"dog"}).verdict == Verdict::Hallucinated);
  CHECK(judge_lexical("duck", std::vector<std::string>{"goose"}, &map).verdict == Verdict::Exists);
  CHECK(judge_lexical("duck", std::vector<std::string>{"goose"}).verdict == Verdict::Hallucinated);
}

TEST_CASE("judge prompt golden strings") {
  CHECK(render_judge_prompt("A dog runs on the beach.", "dog") ==
        "<s>[INST] An image has the following caption: \"A dog runs on the beach.\".\n"
        "Does the image contain the following object? \"dog\".\n"
        "Answer yes/no/unsure.\n"
        "The answer is: [/INST]");
  CHECK(render_judge_prompt("a pine cone on a wooden table", "pine cone") ==
        "<s>[INST] An image has the following caption: \"a pine cone on a wooden table\".\n"
        "Does the image contain the following object? \"pine cone\".\n"
        "Answer yes/no/unsure.\n"
        "The answer is: [/INST]");
  CHECK(render_judge_prompt("", "guitar") ==
        "<s>[INST] An image has the following caption: \"\".\n"
        "Does the image contain the following object? \"guitar\".\n"
        "Answer yes/no/unsure.\n"
        "The answer is: [/INST]");
}

TEST_CASE("judge response parser suite") {
  const std::vector<std::pair<std::string, Verdict>> cases{
      {"yes", Verdict::Exists},
      {"Yes.", Verdict::Exists},
      {"  YES, it does", Verdict::Exists},
      {"no", Verdict::Hallucinated},
      {"The answer is no.", Verdict::Hallucinated},
      {"No, there is no dog.", Verdict::Hallucinated},
      {"unsure", Verdict::Unsure},
      {"I am unsure; maybe yes", Verdict::Unsure},
      {"yesterday I saw no dog", Verdict::Hallucinated},
      {"nope", Verdict::Unsure},
      {"", Verdict::Unsure},
      {"asdf qwerty 42", Verdict::Unsure},
  };
  for (const auto& [text, want] : cases) {
    CAPTURE(text);
    CHECK(parse_judge_response(text) == want);
  }
}

TEST_CASE("remote judge wire contract") {
  auto t = std::make_shared<FakeTransport>(nlohmann::json{{"text", "The answer is no."}});
  RemoteJudge judge(t, 5);
  const GroundTruth gt{"a cat on a mat", {}};
  CHECK(judge.judge("dog", gt).verdict == Verdict::Hallucinated);
  CHECK(t->last["prompt"] == render_judge_prompt("a cat on a mat", "dog"));
  CHECK(t->last["max_tokens"] == 5);
  CHECK(t->last["greedy"] == true);
  RemoteJudge yes(std::make_shared<FakeTransport>(nlohmann::json{{"text", "yes"}}));
  CHECK(yes.judge("cat", gt).verdict == Verdict::Exists);
  RemoteJudge junk(std::make_shared<FakeTransport>(nlohmann::json{{"text", "zzzz"}}));
  CHECK(junk.judge("cat", gt).verdict == Verdict::Unsure);
  RemoteJudge malformed(std::make_shared<FakeTransport>(nlohmann::json{{"answer", "yes"}}));
  CHECK_THROWS_AS(malformed.judge("cat", gt), ServiceError);
  RemoteJudge down(std::make_shared<DownTransport>());
  CHECK_THROWS_AS(down.judge("cat", gt), ServiceError);
}

TEST_CASE("OpenCHAIR counting examples") {
  const auto lex = fixture_lexicon();
  auto make = [](const std::string& pred) { return EvalRecord{pred, {"", {}}}; };
  {
    ScriptedJudge j({{"dog", Verdict::Hallucinated}, {"cat", Verdict::Exists}, {"table", Verdict::Exists},
                     {"guitar", Verdict::Exists}});
    const std::vector<EvalRecord> recs{make("dog and cat"), make("table and guitar")};
    const auto r = openchair_eval(recs, j, lex);
    CHECK(r.och_rate == 0.25);
    CHECK(!r.unsure_warning);
  }
  {
    ScriptedJudge j({{"dog", Verdict::Exists}, {"cat", Verdict::Exists}});
    const std::vector<EvalRecord> recs{make("dog"), make("cat and dog")};
    CHECK(openchair_eval(recs, j, lex).och_rate == 0.0);
  }
  {
    std::map<std::string, Verdict> v{{"dog", Verdict::Hallucinated}, {"cat", Verdict::Hallucinated},
                                     {"table", Verdict::Exists},      {"duck", Verdict::Exists},
                                     {"goose", Verdict::Exists},      {"bird", Verdict::Exists},
                                     {"guitar", Verdict::Exists},     {"pine cone", Verdict::Exists},
                                     {"sky", Verdict::Unsure},        {"cone", Verdict::Unsure}};
    ScriptedJudge j(v);
    const std::vector<EvalRecord> recs{make("dog cat table duck"), make("goose bird guitar pine cone"),
                                       make("sky cone")};
    const auto r = openchair_eval(recs, j, lex);
    CHECK(r.n_h == 2);
    CHECK(r.n_e == 6);
    CHECK(r.n_unsure == 2);
    CHECK(r.och_rate == 0.25);
    CHECK(r.unsure_fraction == 0.2);
    CHECK(r.unsure_warning);
    // Permutation invariance and bounded concurrency give the same tally.
    std::vector<EvalRecord> rev(recs.rbegin(), recs.rend());
    ScriptedJudge j2(v);
    const auto r2 = openchair_eval(rev, j2, lex, default_ignore_list(), 3);
    CHECK(r2.n_h == r.n_h);
    CHECK(r2.n_e == r.n_e);
    CHECK(r2.och_rate == r.och_rate);
    CHECK(r2.per_item.front() == r.per_item.back());
  }
  ScriptedJudge j({});
  CHECK_THROWS_AS(openchair_eval(std::vector<EvalRecord>{}, j, lex), ConfigError);
}

TEST_CASE("OpenCHAIR judge failure carries the partial report") {
  const auto lex = fixture_lexicon();
  ScriptedJudge j({{"dog", Verdict::Exists}});  // "cat" is unknown and throws
  const std::vector<EvalRecord> recs{{"dog", {}}, {"dog", {}}, {"cat", {}}};
  try {
    openchair_eval(recs, j, lex);
    FAIL("expected OchError");
  } catch (const OchError& e) {
    CHECK(e.partial().n_e == 2);
    CHECK(e.partial().per_item.size() == 2);
    CHECK(std::string(e.what()).find("record 2") != std::string::npos);
  }
}

TEST_CASE("lexical judge on self ground truth gives zero OCH") {
  const auto lex = fixture_lexicon();
  std::vector<EvalRecord> recs;
  for (const std::string p : {"dog and cat on a table", "a pine cone", "duck goose guitar"}) {
    recs.push_back({p, {p, extract_objects(p, lex)}});
  }
  LexicalJudge judge;
  CHECK(openchair_eval(recs, judge, lex).och_rate == 0.0);
}

TEST_CASE("CHAIR examples, out-of-vocabulary and synonym-coarseness cases") {
  const auto map = bird_map();
  // Out-of-vocabulary object contributes nothing.
  const auto oov = chair_eval(std::vector<ChairRecord>{{"a guitar on a stool", {"dog"}}}, map);
  CHECK(oov.recognized_instances == 0);
  CHECK(oov.ch_s == 0.0);
  // One hallucinated among four recognized instances.
  const auto one = chair_eval(std::vector<ChairRecord>{{"a dog a cat a duck and a table", {"dog", "cat", "dining table"}}}, map);
  CHECK(one.ch_i == 0.25);
  CHECK(one.ch_s == 1.0);
  // duck vs goose: CHAIR sees bird == bird, the strict lexical judge does not.
  const auto coarse = chair_eval(std::vector<ChairRecord>{{"a duck on the lake", {"bird"}}}, map);
  CHECK(coarse.hallucinated_instances == 0);
  CHECK(coarse.recognized_instances == 1);
  CHECK(judge_lexical("duck", std::vector<std::string>{"goose"}).verdict == Verdict::Hallucinated);
}

TEST_CASE("CHAIR fixture corpus matches a hand tally") {
  const auto map = bird_map();
  const std::map<std::string, std::string> table{{"duck", "bird"}, {"goose", "bird"},  {"puppy", "dog"},
                                                 {"table", "dining table"}, {"bird", "bird"}, {"dog", "dog"},
                                                 {"cat", "cat"}, {"dining table", "dining table"}};
  const std::vector<ChairRecord> corpus{
      {"a dog and a puppy on a dining table", {"dog", "dining table"}},
      {"a cat chasing a bird", {"cat"}},
      {"two geese and a goose", {"bird"}},
      {"a guitar", {"cat"}},
      {"a duck a duck a dog", {"dog"}},
      {"cat cat table", {"cat", "dining table"}},
  };
  const auto got = chair_eval(corpus, map);
  const auto want = hand_chair(corpus, table);
  CHECK(got.recognized_instances == want.recognized_instances);
  CHECK(got.hallucinated_instances == want.hallucinated_instances);
  CHECK(got.hallucinated_captions == want.hallucinated_captions);
  CHECK(got.recognized_instances == 12);
  CHECK(got.hallucinated_instances == 3);
  CHECK(got.ch_i == 3.0 / 12.0);
  CHECK(got.ch_s == 2.0 / 6.0);
}

TEST_CASE("CHAIR and OpenCHAIR agree on canonical-only corpora") {
  const std::vector<std::string> cats{"dog", "cat", "bird", "table", "guitar"};
  const auto ident = ChairSynonymMap::identity(cats);
  std::unordered_map<std::string, double> scores;
  for (const auto& c : cats) scores[c] = 5.0;
  const ConcretenessLexicon lex(scores);
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ChairRecord> chair;
    std::vector<EvalRecord> och;
    for (int r = 0; r < 4; ++r) {
      std::vector<std::string> pool = cats;
      std::string pred;
      for (std::size_t k = 0, n = 1 + rng.index(3); k < n; ++k) {
        const std::size_t i = rng.index(pool.size());
        pred += pool[i] + " ";
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
      }
      std::set<std::string> gt;
      for (const auto& c : cats) {
        if (rng.uniform() < 0.5) gt.insert(c);
      }
      chair.push_back({pred, gt});
      och.push_back({pred, {"", std::vector<std::string>(gt.begin(), gt.end())}});
    }
    LexicalJudge judge;
    const auto c = chair_eval(chair, ident);
    const auto o = openchair_eval(och, judge, lex);
    CHECK(c.hallucinated_instances == o.n_h);
    CHECK(c.recognized_instances == o.n_tot());
    CHECK(c.ch_i == o.och_rate);
  }
}

TEST_CASE("eval records round trip") {
  const std::vector<EvalRecord> recs{{"a dog", {"a dog on grass", {"dog", "grass"}}}, {"\"quoted\"", {"", {}}}};
  std::stringstream ss;
  save_eval_records(ss, recs);
  const auto back = load_eval_records(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].gt.objects == recs[0].gt.objects);
  CHECK(back[1].prediction == "\"quoted\"");
  std::istringstream bad("{\"gt_caption\":\"x\"}\n");
  CHECK_THROWS_AS(load_eval_records(bad), ConfigError);
}

TEST_CASE("policy eval points from captions") {
  WorldSpec spec = default_world_spec();
  spec.num_train_scenes = 5;
  spec.num_eval_scenes = 20;
  const SceneDataset ds = build_world(spec);
  const auto lex = ds.lexicon();
  std::vector<std::string> perfect, empty;
  for (const auto& rec : ds.eval) {
    perfect.push_back(rec.reference_captions[0]);
    empty.push_back("");
  }
  const auto p = score_captions(perfect, ds.eval, lex);
  CHECK(p.mean_contradiction == 0.0);
  CHECK(p.mean_f1 == 1.0);
  CHECK(p.instance_rate == 0.0);
  const auto e = score_captions(empty, ds.eval, lex);
  CHECK(e.mean_f1 == 0.0);
  CHECK(e.mean_length == 0.0);

  std::vector<std::string> one_wrong = perfect;
  one_wrong[0] += " and red " + std::string(ds.eval[0].scene.has_object("dog") ? "cat" : "dog");
  const auto w = score_captions(one_wrong, ds.eval, lex);
  CHECK(w.sentence_rate == doctest::Approx(1.0 / 20.0));
  CHECK(w.instance_rate > 0.0);
}

TEST_CASE("policy evaluation is deterministic") {
  WorldSpec spec = default_world_spec();
  spec.num_train_scenes = 5;
  spec.num_eval_scenes = 8;
  const SceneDataset ds = build_world(spec);
  const Vocabulary vocab = ds.vocabulary();
  Rng rng(4);
  const PolicyParams p = PolicyParams::random(default_policy_shape(vocab, spec.feature_dim), rng);
  const auto a = fidelity_adequacy_point(p, ds.eval, vocab, ds.lexicon());
  const auto b = fidelity_adequacy_point(p, ds.eval, vocab, ds.lexicon());
  CHECK(a.captions == b.captions);
  CHECK(a.mean_f1 == b.mean_f1);
  CHECK(a.mean_contradiction == b.mean_contradiction);
}
