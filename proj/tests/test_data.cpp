#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mmkp/data.hpp"
#include "mmkp/errors.hpp"

using namespace mmkp;
using namespace mmkp::data;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "mmkp_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::filesystem::path write_lines(const std::string& name, const std::vector<std::string>& lines) {
  auto path = temp_file(name);
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
  return path;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Post make_post(std::string id, Tokens text, std::vector<std::string> kps, Tokens ocr = {}, Tokens attrs = {}) {
  Post p;
  p.id = std::move(id);
  p.text = std::move(text);
  p.keyphrases = std::move(kps);
  p.ocr = std::move(ocr);
  p.attributes = std::move(attrs);
  return p;
}

}  // namespace

TEST_CASE("normalize_tokens examples") {
  CHECK(normalize_tokens({"Check", "http://t.co/x", "@bob", "2019"}) == Tokens{"check", "<url>", "<mention>", "<number>"});
  CHECK(normalize_tokens({"cat"}) == Tokens{"cat"});
  CHECK(normalize_tokens({"!!!"}).empty());
  CHECK(normalize_tokens({"don't", "#nba", "a1"}).empty());
}

TEST_CASE("normalize_tokens is idempotent") {
  const Tokens raw = {"Check", "https://x.y", "@bob", "2019", "!!!", "NBA", "<url>", "finals", "3pm", "www.a.com", "@"};
  const Tokens once = normalize_tokens(raw);
  CHECK(normalize_tokens(once) == once);
}

TEST_CASE("load_dataset reads valid lines in order") {
  auto path = write_lines("valid.jsonl",
                          {R"({"id":"a","text":["I","love","cats"],"ocr":[],"attributes":["cat"],"keyphrases":["Cats"]})",
                           R"({"id":"b","text":["go"],"ocr":["nba"],"attributes":[],"keyphrases":["nba finals","x"]})",
                           R"({"id":"c","text":["z"],"ocr":[],"attributes":[],"visual_features":[[1,2],[3,4]],"keyphrases":["z"]})"});
  auto posts = load_dataset(path);
  REQUIRE(posts.size() == 3);
  CHECK(posts[0].id == "a");
  CHECK(posts[0].text == Tokens{"i", "love", "cats"});
  CHECK(posts[0].keyphrases == std::vector<std::string>{"cats"});
  CHECK(posts[1].keyphrases.size() == 2);
  REQUIRE(posts[2].visual.has_value());
  CHECK(*posts[2].visual == Tensor::matrix({{1, 2}, {3, 4}}));
}

TEST_CASE("load_dataset reports the failing line") {
  auto path = write_lines("missing.jsonl", {R"({"id":"a","text":["x"],"ocr":[],"attributes":[],"keyphrases":["x"]})",
                                            R"({"id":"b","text":["x"],"ocr":[],"attributes":[]})"});
  try {
    load_dataset(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("keyphrases") != std::string::npos);
  }
  auto bad_json = write_lines("badjson.jsonl", {R"({"id":)"});
  CHECK_THROWS_AS(load_dataset(bad_json), ParseError);
  auto extra = write_lines("extra.jsonl", {R"({"id":"a","text":["x"],"ocr":[],"attributes":[],"keyphrases":["x"],"lang":"en"})"});
  CHECK_THROWS_AS(load_dataset(extra), ParseError);
}

TEST_CASE("load_dataset validates invariants") {
  auto six = write_lines("six.jsonl",
                         {R"({"id":"a","text":["x"],"ocr":[],"attributes":["a","b","c","d","e","f"],"keyphrases":["x"]})"});
  try {
    load_dataset(six);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("attributes") != std::string::npos);
  }
  auto empty_text = write_lines("empty_text.jsonl", {R"({"id":"a","text":["!!"],"ocr":[],"attributes":[],"keyphrases":["x"]})"});
  CHECK_THROWS_AS(load_dataset(empty_text), ValidationError);
  auto rows = write_lines("rows.jsonl",
                          {R"({"id":"a","text":["x"],"ocr":[],"attributes":[],"visual_features":[[1,2]],"keyphrases":["x"]})"});
  LoadOptions opts;
  opts.visual_rows = 49;
  CHECK_THROWS_AS(load_dataset(rows, opts), ValidationError);
}

TEST_CASE("visual sidecar round-trips float32 values") {
  std::vector<Tensor> feats = {Tensor::matrix({{0.5, -1.25}, {3, 4}}), Tensor::matrix({{1, 2}, {0.125, 8}})};
  auto side = temp_file("feats.bin");
  write_visual_sidecar(side, feats);
  const std::string bytes = slurp(side);
  CHECK(bytes.substr(0, 4) == "MMKP");
  CHECK(bytes.size() == 4 + 4 * 4 + 2 * 2 * 2 * 4);
  CHECK(read_visual_sidecar(side) == feats);

  auto path = write_lines("two.jsonl", {R"({"id":"a","text":["x"],"ocr":[],"attributes":[],"keyphrases":["x"]})",
                                        R"({"id":"b","text":["y"],"ocr":[],"attributes":[],"keyphrases":["y"]})"});
  LoadOptions opts;
  opts.visual_sidecar = side;
  auto posts = load_dataset(path, opts);
  CHECK(*posts[1].visual == feats[1]);
}

TEST_CASE("replicate_instances: one instance per keyphrase") {
  std::vector<Post> posts = {make_post("a", {"x"}, {"cat", "dog"}), make_post("b", {"y"}, {"cat"})};
  auto vocab = build_vocab(posts);
  auto inst = replicate_instances(posts, vocab, true);
  CHECK(inst.size() == 3);
  CHECK(inst[0].post_index == 0);
  CHECK(inst[1].target == Tokens{"dog"});
  CHECK(inst[2].label == vocab.label_of("cat"));

  std::vector<Post> val = {make_post("c", {"z"}, {"bird"})};
  CHECK_THROWS_AS(replicate_instances(val, vocab, true), ValidationError);
  CHECK(replicate_instances(val, vocab, false)[0].label == kUnseenLabel);
}

TEST_CASE("replicate_instances count equals the keyphrase sum") {
  auto posts = synth_corpus({.n_posts = 40, .vocab_size = 12, .seed = 3});
  posts[5].keyphrases.push_back("extra");
  posts[9].keyphrases.push_back("more words");
  std::size_t total = 0;
  for (const auto& p : posts) total += p.keyphrases.size();
  auto vocab = build_vocab(posts);
  CHECK(replicate_instances(posts, vocab, true).size() == total);
}

TEST_CASE("build_vocab examples") {
  std::vector<Post> posts = {make_post("a", {"a", "a", "b"}, {"cat"}), make_post("b", {"a"}, {"dog"})};
  auto v = build_vocab(posts, {.gen_cap = kReservedCount + 1, .min_count = 1});
  CHECK(v.gen.size() == kReservedCount + 1);
  CHECK(v.gen.contains("a"));
  CHECK_FALSE(v.gen.contains("b"));
  for (std::size_t i = 0; i < kReservedCount; ++i) CHECK(v.gen.token(i) == kReservedTokens[i]);
  CHECK(v.cls.size() == 2);
  CHECK_THROWS_AS(build_vocab({}), ValidationError);
}

TEST_CASE("build_vocab breaks frequency ties lexicographically and is deterministic") {
  std::vector<Post> posts = {make_post("a", {"zeta", "beta", "alpha", "beta"}, {"k"})};
  auto v = build_vocab(posts, {.gen_cap = kReservedCount + 3});
  CHECK(v.gen.token(kReservedCount) == "beta");
  CHECK(v.gen.token(kReservedCount + 1) == "alpha");
  CHECK(v.gen.token(kReservedCount + 2) == "k");
  CHECK(build_vocab(posts).gen.tokens() == build_vocab(posts).gen.tokens());
  CHECK(build_vocab(posts).gen.hash() == build_vocab(posts).gen.hash());
}

TEST_CASE("build_vocab respects min_count") {
  std::vector<Post> posts = {make_post("a", {"a", "a", "b"}, {"a"})};
  auto v = build_vocab(posts, {.min_count = 2});
  CHECK(v.gen.contains("a"));
  CHECK_FALSE(v.gen.contains("b"));
}

TEST_CASE("vocabulary save/load round-trip") {
  auto posts = synth_corpus({.n_posts = 10});
  auto v = build_vocab(posts);
  auto path = temp_file("vocab.json");
  save_vocab(path, v);
  auto w = load_vocab(path);
  CHECK(w.gen.tokens() == v.gen.tokens());
  CHECK(w.cls.tokens() == v.cls.tokens());
}

TEST_CASE("append_ocr examples") {
  TokenVocab gen;
  for (auto t : kReservedTokens) gen.add(std::string(t));
  gen.add("nba");
  gen.add("finals");
  CHECK(append_ocr({"a"}, {"nba", "finals"}, gen) == Tokens{"a", "<sep>", "nba", "finals"});
  CHECK(append_ocr({"a"}, {}, gen) == Tokens{"a"});
  CHECK(append_ocr({"a"}, {"qwerty"}, gen) == Tokens{"a"});
  CHECK(append_ocr({"a"}, {"qwerty", "nba"}, gen) == Tokens{"a", "<sep>", "nba"});
}

TEST_CASE("filter_rare_keyphrases drops rare labels and emptied posts") {
  std::vector<Post> posts = {make_post("a", {"x"}, {"common", "rare"}), make_post("b", {"x"}, {"common"}),
                             make_post("c", {"x"}, {"rare2"})};
  auto kept = filter_rare_keyphrases(posts, 2);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].keyphrases == std::vector<std::string>{"common"});
}

TEST_CASE("encoded instances round-trip through a covering vocabulary") {
  auto posts = synth_corpus({.n_posts = 30, .vocab_size = 20, .seed = 11});
  auto vocab = build_vocab(posts);
  for (const auto& inst : replicate_instances(posts, vocab, true)) {
    CHECK(decode(encode(inst.target, vocab.gen), vocab.gen) == inst.target);
    const auto& post = posts[inst.post_index];
    CHECK(decode(encode(post.text, vocab.gen), vocab.gen) == post.text);
    CHECK(vocab.cls.token(inst.label) == join_tokens(inst.target));
  }
}

TEST_CASE("synth_corpus is deterministic and well formed") {
  SynthOptions opts{.n_posts = 50, .vocab_size = 30, .seed = 7};
  auto a = temp_file("synth_a.jsonl"), b = temp_file("synth_b.jsonl");
  save_dataset(a, synth_corpus(opts));
  save_dataset(b, synth_corpus(opts));
  CHECK(slurp(a) == slurp(b));
  auto other = temp_file("synth_c.jsonl");
  save_dataset(other, synth_corpus({.n_posts = 50, .vocab_size = 30, .seed = 8}));
  CHECK(slurp(a) != slurp(other));

  auto posts = load_dataset(a);
  REQUIRE(posts.size() == 50);
  bool saw[3] = {false, false, false};
  for (std::size_t i = 0; i < posts.size(); ++i) {
    const auto& p = posts[i];
    CHECK_FALSE(p.keyphrases.empty());
    const auto kp = split_keyphrase(p.keyphrases[0]);
    auto in = [&](const Tokens& toks) {
      return std::search(toks.begin(), toks.end(), kp.begin(), kp.end()) != toks.end();
    };
    switch (synth_population(i)) {
      case SynthPopulation::kTextTrigger:
        saw[0] = true;
        CHECK(in(p.text));
        break;
      case SynthPopulation::kAttributeTrigger:
        saw[1] = true;
        CHECK_FALSE(in(p.text));
        CHECK_FALSE(in(p.ocr));
        break;
      case SynthPopulation::kOcrTrigger:
        saw[2] = true;
        CHECK_FALSE(in(p.text));
        CHECK(in(p.ocr));
        break;
    }
  }
  CHECK((saw[0] && saw[1] && saw[2]));
}
