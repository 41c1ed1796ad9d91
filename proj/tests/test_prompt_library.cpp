#include <gtest/gtest.h>

#include <algorithm>

#include "support.hpp"

using namespace proapo;
namespace ts = testing_support;

namespace {

bool has(const std::vector<std::string>& v, const std::string& s) { return std::find(v.begin(), v.end(), s) != v.end(); }

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::ConfigInvalid;
}

// Stand-in encoder: one deterministic unit row per manifest entry.
EmbeddingStore encode(const EncodeManifest& m, std::uint32_t n_classes, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<TextMeta> meta;
  for (const auto& e : m.entries) meta.push_back({e.kind, e.class_id, e.template_id, e.full_text});
  return EmbeddingStore::texts(8, n_classes, ts::random_rows(rng, m.size(), 8), std::move(meta), m.fingerprint);
}

std::size_t expected_count(const PromptLibrary& lib, std::size_t n_integration) {
  std::size_t names = 0, descs = 0;
  for (std::size_t c = 0; c < lib.n_classes(); ++c) {
    names += 1 + lib.classes()[c].synonyms.size();
    descs += lib.descriptions()[c].size();
  }
  return lib.n_templates() * names + n_integration * descs;
}

}  // namespace

TEST(Augment, WorkedExample) {
  const auto out = augment_templates({"a photo of a {}."}, {"bird"});
  EXPECT_EQ(out.front(), "a photo of a {}.");
  EXPECT_TRUE(has(out, "a photo of a {}, a type of bird."));
  EXPECT_TRUE(has(out, "a photo of a bird: {}."));
  EXPECT_TRUE(has(out, "a bird of a {}."));
  EXPECT_TRUE(has(out, "a bird photo of a {}."));
  EXPECT_EQ(out.size(), 5u);
}

TEST(Augment, NoDomainsIsIdentity) {
  const std::vector<std::string> t = {"a photo of a {}.", "itap of a {}."};
  EXPECT_EQ(augment_templates(t, {}), t);
}

TEST(Augment, NoPhotoSkipsWordRewrites) {
  const auto out = augment_templates({"an image of {}."}, {"flower"});
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0], "an image of {}.");
  EXPECT_EQ(out[1], "an image of {}, a type of flower.");
  EXPECT_EQ(out[2], "an image of flower: {}.");
}

TEST(Augment, WholeWordOnly) {
  const auto out = augment_templates({"a photograph of {}."}, {"car"});
  EXPECT_EQ(out.size(), 3u);
}

TEST(Augment, Idempotent) {
  const std::vector<std::string> t = {"a photo of a {}.", "a close-up photo of the {}.", "art of {}"};
  const std::vector<std::string> d = {"bird", "pet"};
  const auto once = augment_templates(t, d);
  EXPECT_EQ(augment_templates(once, d), once);
}

TEST(Augment, PlaceholderRequired) {
  EXPECT_EQ(code_of([] { augment_templates({"no slot"}, {}); }), ErrorCode::NoPlaceholder);
  EXPECT_EQ(code_of([] { augment_templates({"{} and {}"}, {}); }), ErrorCode::NoPlaceholder);
}

TEST(Manifest, Counts) {
  // 1 template, 2 classes, nothing else -> 2
  EXPECT_EQ(instantiate_manifest(ts::simple_library(2, {0, 0}), {}).size(), 2u);
  // 2 templates, 1 class with 1 synonym -> 2 x 2
  PromptLibrary syn({"a photo of a {}.", "art of {}."}, {}, {{"dog", {"puppy"}}}, {});
  EXPECT_EQ(instantiate_manifest(syn, {}).size(), 4u);
  // 2 templates x 3 classes + 1 integration template x 3 x 5 descriptions -> 6 + 15
  const auto lib = ts::simple_library(3, {5, 5, 5}, {"a photo of a {}.", "art of {}."});
  const auto m = instantiate_manifest(lib, {0u});
  EXPECT_EQ(m.size(), 21u);
  EXPECT_EQ(m.size(), expected_count(lib, 1));
}

TEST(Manifest, CountFormulaOnMixedLibrary) {
  PromptLibrary lib({"a photo of a {}.", "art of {}.", "{} in the wild"}, {"pet"},
                    {{"cat", {"kitty", "feline"}}, {"dog", {}}, {"fox", {"vixen"}}},
                    {{"small", "whiskers"}, {}, {"red", "bushy tail", "pointy ears"}});
  for (const std::vector<IntegrationSlot>& integration :
       {std::vector<IntegrationSlot>{}, {std::nullopt}, {0u, 2u}, {std::nullopt, 1u, 3u}}) {
    EXPECT_EQ(instantiate_manifest(lib, integration).size(), expected_count(lib, integration.size()));
  }
}

TEST(Manifest, OrderingAndTexts) {
  PromptLibrary lib({"a photo of a {}.", "art of {}."}, {}, {{"cat", {"kitty"}}, {"dog", {}}},
                    {{"small."}, {"loyal"}});
  const auto m = instantiate_manifest(lib, {1u});
  std::vector<std::string> texts;
  for (const auto& e : m.entries) texts.push_back(e.full_text);
  const std::vector<std::string> expect = {"a photo of a cat.", "a photo of a kitty.", "a photo of a dog.",
                                           "art of cat.",       "art of kitty.",       "art of dog.",
                                           "art of cat. small.", "art of dog. loyal."};
  EXPECT_EQ(texts, expect);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m.entries[i].manifest_id, i);
  EXPECT_EQ(m.entries[1].kind, TextKind::SynonymInstance);
  EXPECT_EQ(m.entries[6].kind, TextKind::Description);
}

TEST(Manifest, FingerprintIsShaOfJoinedTexts) {
  const auto m = instantiate_manifest(ts::simple_library(2, {0, 0}), {});
  // sha256("a photo of a c0.\na photo of a c1.")
  EXPECT_EQ(m.fingerprint, detail::sha256_hex("a photo of a c0.\na photo of a c1."));
  EXPECT_EQ(detail::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Manifest, EmptyLibrary) {
  EXPECT_EQ(code_of([] { instantiate_manifest(PromptLibrary({}, {}, {{"a", {}}}, {}), {}); }),
            ErrorCode::EmptyLibrary);
  EXPECT_EQ(code_of([] { description_manifest(ts::simple_library(2, {0, 0}), {std::nullopt}); }),
            ErrorCode::EmptyLibrary);
}

TEST(Manifest, JsonRoundTrip) {
  PromptLibrary lib({"a photo of a {}."}, {}, {{"cat", {"kitty"}}}, {{"small"}});
  const auto m = instantiate_manifest(lib, {std::nullopt, 0u});
  EXPECT_EQ(manifest_from_json(nlohmann::json::parse(manifest_to_json(m).dump())), m);
}

TEST(Bind, HappyPath) {
  PromptLibrary lib({"a photo of a {}.", "art of {}."}, {}, {{"cat", {"kitty"}}, {"dog", {}}},
                    {{"small"}, {"loyal", "barks"}});
  const auto m = instantiate_manifest(lib, {std::nullopt});
  const auto bound = bind_embeddings(lib, m, encode(m, 2));
  EXPECT_TRUE(bound.templates_bound());
  EXPECT_TRUE(bound.descriptions_bound());
  EXPECT_EQ(bound.template_text(1, 1), 5u);
  EXPECT_EQ(bound.synonym_texts(1, 0), std::vector<TextId>{4u});
  EXPECT_EQ(bound.description_texts(1), (std::vector<TextId>{7u, 8u}));
  EXPECT_FALSE(lib.templates_bound());
  EXPECT_EQ(code_of([&] { (void)lib.template_text(0, 0); }), ErrorCode::UnboundId);
}

TEST(Bind, Errors) {
  const auto lib = ts::simple_library(2, {1, 1});
  const auto m = instantiate_manifest(lib, {std::nullopt});
  const auto store = encode(m, 2);
  // One fewer row.
  std::vector<float> rows(store.data().begin(), store.data().end() - store.dim());
  std::vector<TextMeta> meta(store.meta().begin(), store.meta().end() - 1);
  const auto short_store = EmbeddingStore::texts(store.dim(), 2, rows, meta, store.fingerprint());
  EXPECT_EQ(code_of([&] { bind_embeddings(lib, m, short_store); }), ErrorCode::CountMismatch);
  // Tampered fingerprint.
  const auto tampered = EmbeddingStore::texts(store.dim(), 2, {store.data().begin(), store.data().end()},
                                              {store.meta().begin(), store.meta().end()}, "deadbeef");
  EXPECT_EQ(code_of([&] { bind_embeddings(lib, m, tampered); }), ErrorCode::FingerprintMismatch);
  // Rows swapped relative to the manifest.
  std::vector<TextMeta> swapped(store.meta().begin(), store.meta().end());
  std::swap(swapped[0], swapped[1]);
  const auto reordered = EmbeddingStore::texts(store.dim(), 2, {store.data().begin(), store.data().end()},
                                               swapped, store.fingerprint());
  EXPECT_EQ(code_of([&] { bind_embeddings(lib, m, reordered); }), ErrorCode::FingerprintMismatch);
}

TEST(Bind, TwoPhaseOffsets) {
  const auto lib = ts::simple_library(2, {2, 1}, {"a photo of a {}.", "art of {}."});
  const auto m1 = instantiate_manifest(lib, {});
  const auto s1 = encode(m1, 2, 1);
  auto bound = bind_embeddings(lib, m1, s1);
  EXPECT_FALSE(bound.descriptions_bound());
  const auto m2 = description_manifest(bound, {1u});
  EXPECT_EQ(m2.entries[0].full_text, "art of c0. c0 detail 0.");
  const auto s2 = encode(m2, 2, 2);
  bound = bind_embeddings(bound, m2, s2, static_cast<TextId>(s1.n_rows()));
  EXPECT_TRUE(bound.descriptions_bound());
  EXPECT_EQ(bound.description_texts(1), std::vector<TextId>{6u});
  const auto all = concat_texts(s1, s2);
  EXPECT_EQ(all.meta()[6].source_text, "art of c1. c1 detail 0.");
}

TEST(LibraryFiles, SeparateAndCombinedAgree) {
  const auto dir = ts::temp_dir("libfiles");
  detail::write_file(dir / "templates.json", R"(["a photo of a {}.", "art of {}."])");
  detail::write_file(dir / "domains.json", R"(["pet"])");
  detail::write_file(dir / "classes.json",
                     R"([{"class_id": 1, "name": "dog", "synonyms": []}, {"class_id": 0, "name": "cat", "synonyms": ["kitty"]}])");
  detail::write_file(dir / "descriptions.json", R"([{"class_id": 0, "text": "small"}, {"class_id": 1, "text": "loyal"}])");
  const auto a = load_library(dir / "templates.json", dir / "domains.json", dir / "classes.json",
                              dir / "descriptions.json");
  EXPECT_EQ(a.classes()[0].name, "cat");
  EXPECT_EQ(a.n_templates(), augment_templates({"a photo of a {}.", "art of {}."}, {"pet"}).size());
  detail::write_file(dir / "library.json",
                     library_files_json({"a photo of a {}.", "art of {}."}, {"pet"}, a.classes(), a.descriptions())
                         .dump());
  const auto b = load_library(dir / "library.json");
  EXPECT_EQ(instantiate_manifest(a, {std::nullopt}), instantiate_manifest(b, {std::nullopt}));

  detail::write_file(dir / "bad.json", R"([{"class_id": 3, "name": "x"}])");
  EXPECT_EQ(code_of([&] { load_library(dir / "templates.json", std::nullopt, dir / "bad.json", std::nullopt); }),
            ErrorCode::ParseError);
  detail::write_file(dir / "broken.json", "{not json");
  EXPECT_EQ(code_of([&] { load_library(dir / "broken.json"); }), ErrorCode::ParseError);
  detail::write_file(dir / "partial.json", R"({"templates": []})");
  EXPECT_EQ(code_of([&] { load_library(dir / "partial.json"); }), ErrorCode::ParseError);
}
