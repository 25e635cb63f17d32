#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "anchornet/corpus.hpp"
#include "anchornet/io.hpp"

using namespace anchornet;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.vocab_size = 17;
  cfg.embed_dim = 4;
  cfg.head_mid = 3;
  cfg.head_out = 5;
  cfg.branch_filters = 6;
  cfg.attn_dim = 3;
  cfg.num_classes = 3;
  cfg.seq_len = 10;
  cfg.kernels = {2, 4};
  cfg.aux_weight = 0.25;
  return cfg;
}

}  // namespace

TEST_CASE("stack text round-trips") {
  std::ifstream f(std::string(ANCHORNET_CONFIG_DIR) + "/resnet50.stack");
  REQUIRE(f.good());
  const std::vector<StackLayer> stack = parse_stack(f);
  std::stringstream ss;
  write_stack(ss, stack);
  const std::vector<StackLayer> again = parse_stack(ss);
  REQUIRE(again.size() == stack.size());
  for (size_t i = 0; i < stack.size(); ++i) {
    CHECK(again[i].name == stack[i].name);
    CHECK(again[i].kind == stack[i].kind);
    CHECK(again[i].kernel == stack[i].kernel);
    CHECK(again[i].stride == stack[i].stride);
    CHECK(again[i].padding == stack[i].padding);
    CHECK(again[i].in_ch == stack[i].in_ch);
    CHECK(again[i].out_ch == stack[i].out_ch);
    CHECK(again[i].groups == stack[i].groups);
    CHECK(again[i].parallel == stack[i].parallel);
  }
}

TEST_CASE("stack parser reports the offending line") {
  std::stringstream bad_header("anchornet-stack v9\n");
  CHECK_THROWS_AS(parse_stack(bad_header), DataError);
  std::stringstream bad_op("anchornet-stack v1\nlayer name=a op=mystery in=1 out=1\n");
  CHECK_THROWS_WITH(parse_stack(bad_op), Catch::Matchers::ContainsSubstring("line 2"));
  std::stringstream missing("anchornet-stack v1\n# fine\nlayer name=a op=conv2d out=1\n");
  CHECK_THROWS_WITH(parse_stack(missing), Catch::Matchers::ContainsSubstring("missing in="));
  std::stringstream bad_int("anchornet-stack v1\nlayer name=a op=conv2d in=x out=1\n");
  CHECK_THROWS_WITH(parse_stack(bad_int), Catch::Matchers::ContainsSubstring("bad integer"));
  std::stringstream empty("anchornet-stack v1\n# nothing\n");
  CHECK_THROWS_AS(parse_stack(empty), DataError);
}

TEST_CASE("stats parser validates its directives") {
  std::stringstream good(
      "anchornet-stats v1\nfull 1x59\nupstream_flops 5\n"
      "branch tag=b3 images=10 mean_patches=1.5 patch=1x3\n");
  const PipelineStats st = parse_stats(good);
  CHECK(st.full == Size2{1, 59});
  CHECK(st.upstream_flops == 5);
  REQUIRE(st.branches.size() == 1);
  CHECK(st.branches[0].tag == "b3");
  CHECK(st.branches[0].mean_patches == 1.5);
  CHECK(st.branches[0].patch == Size2{1, 3});
  std::stringstream no_full(
      "anchornet-stats v1\nbranch tag=a images=1 mean_patches=1 patch=3x3\n");
  CHECK_THROWS_WITH(parse_stats(no_full), Catch::Matchers::ContainsSubstring("full"));
  std::stringstream no_branch("anchornet-stats v1\nfull 8x8\n");
  CHECK_THROWS_AS(parse_stats(no_branch), DataError);
  std::stringstream unknown("anchornet-stats v1\nfull 8x8\nwhatever 3\n");
  CHECK_THROWS_WITH(parse_stats(unknown), Catch::Matchers::ContainsSubstring("line 3"));
}

TEST_CASE("heatmap text round-trips exactly") {
  Heatmap hm;
  hm.branch = 1;
  hm.cls = 2;
  hm.rf = {3, 5};
  hm.jump = {2, 3};
  hm.shape = {2, 3};
  hm.in_size = {(2 - 1) * 2 + 3, (3 - 1) * 3 + 5};
  hm.values = {0.125, -3.5, 1e-17, 2.0 / 3.0, 42.0, -0.0};
  std::stringstream ss;
  write_heatmap(ss, hm);
  const Heatmap back = parse_heatmap(ss);
  CHECK(back.branch == hm.branch);
  CHECK(back.cls == hm.cls);
  CHECK(back.rf == hm.rf);
  CHECK(back.jump == hm.jump);
  CHECK(back.shape == hm.shape);
  CHECK(back.in_size == hm.in_size);
  CHECK(back.values == hm.values);
}

TEST_CASE("heatmap parser enforces shape before rows and row widths") {
  std::stringstream early("anchornet-heatmap v1\nrow 1 2\n");
  CHECK_THROWS_WITH(parse_heatmap(early), Catch::Matchers::ContainsSubstring("row before shape"));
  std::stringstream narrow(
      "anchornet-heatmap v1\nin 4x4\nrf 1x1\njump 1x1\nshape 2x2\nrow 1 2 3\nrow 1 2\n");
  CHECK_THROWS_WITH(parse_heatmap(narrow), Catch::Matchers::ContainsSubstring("expected 2"));
  std::stringstream short_rows(
      "anchornet-heatmap v1\nin 4x4\nrf 1x1\njump 1x1\nshape 2x2\nrow 1 2\n");
  CHECK_THROWS_AS(parse_heatmap(short_rows), DataError);
  std::ifstream demo(std::string(ANCHORNET_CONFIG_DIR) + "/demo.heatmap");
  REQUIRE(demo.good());
  const Heatmap hm = parse_heatmap(demo);
  CHECK(hm.shape == Size2{5, 5});
  const AnchorPatch top = top_patch(hm);
  CHECK(top.loc.row == 2);
  CHECK(top.loc.col == 2);
  CHECK(top.score == 0.95);
}

TEST_CASE("localization records round-trip") {
  std::vector<LocalizationRecord> recs(3);
  recs[0] = {0, 1, 2, 0, 4, 3, 2, 0.875};
  recs[1] = {1, -1, 0, 2, 0, 7, 1, 1.0 / 3.0};
  recs[2] = {2, 3, 3, 1, 16, 5, 3, 0.5};
  std::stringstream ss;
  write_records(ss, recs);
  const auto back = parse_records(ss);
  REQUIRE(back.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].doc == recs[i].doc);
    CHECK(back[i].label == recs[i].label);
    CHECK(back[i].gamma == recs[i].gamma);
    CHECK(back[i].theta == recs[i].theta);
    CHECK(back[i].start == recs[i].start);
    CHECK(back[i].length == recs[i].length);
    CHECK(back[i].y == recs[i].y);
    CHECK(back[i].p == recs[i].p);
  }
}

TEST_CASE("model configuration text round-trips and rejects unknown keys") {
  const ModelConfig cfg = small_config();
  const ModelConfig back = parse_model_config_text(serialize_model_config(cfg));
  CHECK(back.vocab_size == cfg.vocab_size);
  CHECK(back.embed_dim == cfg.embed_dim);
  CHECK(back.head_mid == cfg.head_mid);
  CHECK(back.head_out == cfg.head_out);
  CHECK(back.branch_filters == cfg.branch_filters);
  CHECK(back.attn_dim == cfg.attn_dim);
  CHECK(back.num_classes == cfg.num_classes);
  CHECK(back.seq_len == cfg.seq_len);
  CHECK(back.kernels == cfg.kernels);
  CHECK(back.aux_weight == cfg.aux_weight);
  CHECK_THROWS_AS(parse_model_config_text("vocab_size=4\nwhat=3\n"), DataError);
  CHECK_THROWS_AS(parse_model_config_text(serialize_model_config(cfg) + "kernels=99\n"),
                  DataError);
}

TEST_CASE("checkpoints restore the exact parameter bytes") {
  const ModelConfig cfg = small_config();
  Model model(cfg, 321);
  const std::map<std::string, std::string> meta{{"alpha", "1"}, {"note", "two words"}};
  const std::string bytes = serialize_checkpoint(model, meta);
  const Checkpoint ck = deserialize_checkpoint(bytes);
  CHECK(ck.meta == meta);
  CHECK(ck.config.kernels == cfg.kernels);
  Model back = model_from_checkpoint(ck);
  const auto want = model.params();
  const auto got = back.params();
  REQUIRE(want.size() == got.size());
  for (size_t i = 0; i < want.size(); ++i) {
    CHECK(got[i]->name == want[i]->name);
    CHECK(got[i]->value.shape == want[i]->value.shape);
    CHECK(got[i]->value.data == want[i]->value.data);
  }
  // A second serialization of the restored model is byte-identical.
  CHECK(serialize_checkpoint(back, meta) == bytes);
}

TEST_CASE("corrupted checkpoints are refused") {
  Model model(small_config(), 7);
  const std::string bytes = serialize_checkpoint(model);

  CHECK_THROWS_WITH(deserialize_checkpoint(""), Catch::Matchers::ContainsSubstring("truncated"));
  CHECK_THROWS_WITH(deserialize_checkpoint(bytes.substr(0, bytes.size() - 9)),
                    Catch::Matchers::ContainsSubstring("checksum"));

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH(deserialize_checkpoint(bad_magic),
                    Catch::Matchers::ContainsSubstring("magic"));

  std::string flipped = bytes;
  flipped[bytes.size() / 2] = static_cast<char>(flipped[bytes.size() / 2] ^ 0x40);
  CHECK_THROWS_WITH(deserialize_checkpoint(flipped),
                    Catch::Matchers::ContainsSubstring("checksum"));

  // Version bump with a recomputed checksum reaches the version check.
  std::string vbody = bytes.substr(0, bytes.size() - 8);
  vbody[8] = 2;
  detail::ByteWriter vw;
  vw.buf = vbody;
  vw.u64(detail::fnv1a(vbody));
  CHECK_THROWS_WITH(deserialize_checkpoint(vw.buf),
                    Catch::Matchers::ContainsSubstring("version"));

  // Valid checksum over a body with junk appended trips the length check.
  std::string tbody = bytes.substr(0, bytes.size() - 8) + "junk";
  detail::ByteWriter tw;
  tw.buf = tbody;
  tw.u64(detail::fnv1a(tbody));
  CHECK_THROWS_WITH(deserialize_checkpoint(tw.buf),
                    Catch::Matchers::ContainsSubstring("trailing"));
}

TEST_CASE("model restore cross-checks names, shapes, and values") {
  Model model(small_config(), 9);
  Checkpoint ck = deserialize_checkpoint(serialize_checkpoint(model));
  Checkpoint renamed = ck;
  renamed.tensors[0].first = "nope";
  CHECK_THROWS_AS(model_from_checkpoint(renamed), DataError);
  Checkpoint reshaped = ck;
  reshaped.tensors[2].second = Tensor({1}, {0.5});
  CHECK_THROWS_AS(model_from_checkpoint(reshaped), DataError);
  Checkpoint poisoned = ck;
  poisoned.tensors[1].second.data[0] = std::nan("");
  CHECK_THROWS_AS(model_from_checkpoint(poisoned), DataError);
  Checkpoint shortened = ck;
  shortened.tensors.pop_back();
  CHECK_THROWS_AS(model_from_checkpoint(shortened), DataError);
}

TEST_CASE("vocabulary file format") {
  Vocab v;
  v.add("hello");
  v.add("world");
  std::stringstream ss;
  write_vocab(ss, v);
  const Vocab back = parse_vocab(ss);
  CHECK(back.size() == v.size());
  CHECK(back.id("hello") == v.id("hello"));
  CHECK(back.id("world") == v.id("world"));
  CHECK(back.id("missing") == Vocab::kUnk);
  std::stringstream dup("anchornet-vocab v1\n<unk>\n<pad>\na\na\n");
  CHECK_THROWS_WITH(parse_vocab(dup), Catch::Matchers::ContainsSubstring("duplicate"));
  std::stringstream no_reserved("anchornet-vocab v1\na\nb\n");
  CHECK_THROWS_AS(parse_vocab(no_reserved), DataError);
}

TEST_CASE("corpus parsing and writing") {
  std::stringstream ss("1\tThe Cat SAT\n0\tdog  runs\n");
  const auto docs = parse_corpus(ss);
  REQUIRE(docs.size() == 2);
  CHECK(docs[0].label == 1);
  CHECK(docs[0].tokens == std::vector<std::string>{"the", "cat", "sat"});
  CHECK(docs[1].tokens == std::vector<std::string>{"dog", "runs"});
  std::stringstream out;
  write_corpus(out, docs);
  const auto again = parse_corpus(out);
  CHECK(again[0].tokens == docs[0].tokens);
  CHECK(again[1].label == docs[1].label);

  std::stringstream no_tab("1 no tab here\n");
  CHECK_THROWS_WITH(parse_corpus(no_tab), Catch::Matchers::ContainsSubstring("line 1"));
  std::stringstream bad_label("x\ttext\n");
  CHECK_THROWS_WITH(parse_corpus(bad_label), Catch::Matchers::ContainsSubstring("bad label"));
  std::stringstream neg("-2\ttext\n");
  CHECK_THROWS_AS(parse_corpus(neg), DataError);
  std::stringstream blank("3\t   \n");
  CHECK_THROWS_WITH(parse_corpus(blank), Catch::Matchers::ContainsSubstring("empty document"));
  std::stringstream nothing("");
  CHECK_THROWS_AS(parse_corpus(nothing), DataError);
}

TEST_CASE("token encoding pads, truncates, and maps unknowns") {
  Vocab v;
  v.add("a");
  v.add("b");
  Document d;
  d.tokens = {"a", "zzz", "b"};
  const std::vector<int> wide = encode(v, d, 5);
  CHECK(wide == std::vector<int>{v.id("a"), Vocab::kUnk, v.id("b"), Vocab::kPad, Vocab::kPad});
  const std::vector<int> tight = encode(v, d, 2);
  CHECK(tight == std::vector<int>{v.id("a"), Vocab::kUnk});
}

TEST_CASE("planted corpus carries its evidence where it says") {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.n_docs = 40;
  spec.seq_len = 12;
  spec.filler_vocab = 30;
  spec.seed = 5;
  const auto docs = make_planted_corpus(spec);
  REQUIRE(docs.size() == 40);
  std::vector<int> counts(4, 0);
  for (const Document& d : docs) {
    REQUIRE(d.label >= 0);
    ++counts[size_t(d.label)];
    REQUIRE(d.plant_start >= 0);
    REQUIRE(d.plant_start + 3 <= int(spec.seq_len));
    const auto tri = planted_trigram(size_t(d.label));
    for (int k = 0; k < 3; ++k) CHECK(d.tokens[size_t(d.plant_start + k)] == tri[size_t(k)]);
    for (int i = 0; i < int(spec.seq_len); ++i) {
      if (i < d.plant_start || i >= d.plant_start + 3) CHECK(d.tokens[size_t(i)][0] == 'w');
    }
  }
  for (int c : counts) CHECK(c == 10);
  // Same seed, same corpus.
  const auto again = make_planted_corpus(spec);
  for (size_t i = 0; i < docs.size(); ++i) CHECK(again[i].tokens == docs[i].tokens);
  SyntheticSpec bad = spec;
  bad.seq_len = 2;
  CHECK_THROWS_AS(make_planted_corpus(bad), std::invalid_argument);
}

TEST_CASE("corpus split is deterministic with the documented sizes") {
  SyntheticSpec spec;
  spec.n_docs = 100;
  spec.seed = 3;
  const auto docs = make_planted_corpus(spec);
  const SplitCorpus a = split_corpus(docs, 11, 0.8, 0.1);
  const SplitCorpus b = split_corpus(docs, 11, 0.8, 0.1);
  CHECK(a.train.size() == 80);
  CHECK(a.val.size() == 10);
  CHECK(a.test.size() == 10);
  for (size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].tokens == b.train[i].tokens);
  const SplitCorpus other = split_corpus(docs, 12, 0.8, 0.1);
  bool any_differs = false;
  for (size_t i = 0; i < a.train.size() && !any_differs; ++i)
    any_differs = a.train[i].tokens != other.train[i].tokens;
  CHECK(any_differs);
  CHECK_THROWS_AS(split_corpus(docs, 1, 0.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(split_corpus(docs, 1, 0.8, 0.3), std::invalid_argument);
}

TEST_CASE("vocabulary built from training docs only, insertion ordered") {
  std::vector<Document> docs(2);
  docs[0].tokens = {"b", "a", "b"};
  docs[1].tokens = {"c", "a"};
  const Vocab v = build_vocab(docs);
  CHECK(v.size() == 5);
  CHECK(v.id("b") == 2);
  CHECK(v.id("a") == 3);
  CHECK(v.id("c") == 4);
  const Vocab filtered = build_vocab(docs, 2);
  CHECK(filtered.id("b") != Vocab::kUnk);
  CHECK(filtered.id("a") != Vocab::kUnk);
  CHECK(filtered.id("c") == Vocab::kUnk);
}
