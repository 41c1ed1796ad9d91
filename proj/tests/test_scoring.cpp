#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace proapo;
namespace ts = testing_support;

namespace {

struct Instance {
  EmbeddingStore images;
  EmbeddingStore texts;
  ClassTexts d;
};

// Random instance: n_classes classes, each with 1..max_texts texts.
Instance random_instance(std::mt19937_64& rng, std::uint32_t n_classes, std::size_t n_img, std::size_t max_texts,
                         std::uint32_t dim = 6) {
  std::uniform_int_distribution<std::size_t> k(1, max_texts);
  std::vector<ClassId> owner;
  ClassTexts d(n_classes);
  for (ClassId c = 0; c < n_classes; ++c) {
    const auto n = k(rng);
    for (std::size_t j = 0; j < n; ++j) {
      d[c].push_back(static_cast<TextId>(owner.size()));
      owner.push_back(c);
    }
  }
  std::vector<ClassId> labels(n_img);
  std::uniform_int_distribution<ClassId> lab(0, n_classes - 1);
  for (auto& l : labels) l = lab(rng);
  return {EmbeddingStore::images(dim, n_classes, ts::random_rows(rng, n_img, dim), labels),
          ts::text_store(dim, n_classes, ts::random_rows(rng, owner.size(), dim), owner), d};
}

ScoreMatrix matrix(std::initializer_list<std::initializer_list<double>> rows) {
  ScoreMatrix m(rows.size(), rows.begin()->size());
  std::size_t i = 0;
  for (const auto& r : rows) {
    std::size_t c = 0;
    for (double v : r) m(i, c++) = v;
    ++i;
  }
  return m;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::ConfigInvalid;
}

}  // namespace

TEST(ClassScores, IdenticalTextScoresOne) {
  const auto images = EmbeddingStore::images(3, 1, {0.0f, 0.6f, 0.8f}, {0});
  const auto texts = ts::text_store(3, 1, {0.0f, 0.6f, 0.8f}, {0});
  EXPECT_NEAR(class_scores(images, texts, {{0}})(0, 0), 1.0, 1e-7);
}

TEST(ClassScores, MeanOfTwoCosines) {
  const auto images = EmbeddingStore::images(2, 1, {1.0f, 0.0f}, {0});
  const float s2 = static_cast<float>(std::sqrt(1.0 - 0.04));
  const auto texts = ts::text_store(2, 1, {0.2f, s2, 0.6f, 0.8f}, {0, 0});
  // (0.2 + 0.6) / 2
  EXPECT_NEAR(class_scores(images, texts, {{0, 1}})(0, 0), 0.4, 1e-7);
}

TEST(ClassScores, OrthogonalIsZero) {
  const auto images = EmbeddingStore::images(3, 2, {1.0f, 0.0f, 0.0f}, {0});
  const auto texts = ts::text_store(3, 2, {0.0f, 1.0f, 0.0f, 0.0f, 0.0f, 1.0f}, {0, 1});
  const auto s = class_scores(images, texts, {{0}, {1}});
  EXPECT_EQ(s(0, 0), 0.0);
  EXPECT_EQ(s(0, 1), 0.0);
}

TEST(ClassScores, MatchesOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 4, 7, 5);
    const auto s = class_scores(inst.images, inst.texts, inst.d);
    const auto o = ts::oracle_scores(ts::rows_of(inst.images), ts::rows_of(inst.texts), inst.d);
    for (std::size_t i = 0; i < s.rows(); ++i)
      for (std::size_t c = 0; c < s.cols(); ++c) EXPECT_NEAR(s(i, c), static_cast<double>(o[i][c]), 1e-12);
  }
}

TEST(ClassScores, MeanDecomposition) {
  std::mt19937_64 rng(12);
  auto inst = random_instance(rng, 1, 5, 1);
  const auto texts = ts::text_store(6, 1, ts::random_rows(rng, 7, 6), std::vector<ClassId>(7, 0));
  const std::vector<TextId> a = {0, 1, 2}, b = {3, 4, 5, 6};
  std::vector<TextId> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  const auto sa = class_scores(inst.images, texts, {a});
  const auto sb = class_scores(inst.images, texts, {b});
  const auto sab = class_scores(inst.images, texts, {ab});
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(sab(i, 0), (3 * sa(i, 0) + 4 * sb(i, 0)) / 7, 1e-9);
}

TEST(ClassScores, UnboundIds) {
  std::mt19937_64 rng(1);
  auto inst = random_instance(rng, 2, 2, 2);
  EXPECT_EQ(code_of([&] { class_scores(inst.images, inst.texts, {{0}, {}}); }), ErrorCode::UnboundId);
  EXPECT_EQ(code_of([&] { class_scores(inst.images, inst.texts, {{0}, {999}}); }), ErrorCode::UnboundId);
}

TEST(Predict, Examples) {
  EXPECT_EQ(predict(matrix({{0.1, 0.9}})), std::vector<ClassId>{1});
  EXPECT_EQ(predict(matrix({{0.5, 0.5}})), std::vector<ClassId>{0});
  EXPECT_EQ(predict(matrix({{0.2, 0.7, 0.7}})), std::vector<ClassId>{1});
}

TEST(Predict, MatchesScalarLoopAndScaleInvariant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  ScoreMatrix m(3, 5), scaled(3, 5);
  ts::Matrix o(3, std::vector<long double>(5));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 5; ++c) {
      m(i, c) = u(rng);
      o[i][c] = m(i, c);
      scaled(i, c) = 3.7 * m(i, c);
    }
  EXPECT_EQ(predict(m), ts::oracle_predict(o));
  EXPECT_EQ(predict(scaled), predict(m));
}

TEST(Fitness, SingleClass) {
  const auto images = EmbeddingStore::images(2, 1, {1.0f, 0.0f, 0.0f, 1.0f}, {0, 0});
  const auto texts = ts::text_store(2, 1, {0.6f, 0.8f}, {0});
  for (double alpha : {0.0, 1.0, 1e3}) {
    const auto s = fitness_from_scores(class_scores(images, texts, {{0}}), images.labels(), alpha, 100);
    EXPECT_EQ(s.accuracy, 1.0);
    EXPECT_EQ(s.mean_true_logprob, 0.0);
    EXPECT_EQ(s.fitness, 1.0);
  }
}

TEST(Fitness, AlphaZeroIsAccuracy) {
  std::mt19937_64 rng(5);
  auto inst = random_instance(rng, 3, 8, 3);
  const auto s = fitness_from_scores(class_scores(inst.images, inst.texts, inst.d), inst.images.labels(), 0.0, 100);
  EXPECT_EQ(s.fitness, s.accuracy);
  EXPECT_EQ(std::round(s.accuracy * 8), s.accuracy * 8);
}

TEST(Fitness, LargerMarginWins) {
  // Same prediction (class 0 for a class-0 image), margins 0.3 and 0.1.
  const std::vector<ClassId> labels = {0};
  for (double alpha : {1e-3, 1.0, 1e3}) {
    const auto wide = fitness_from_scores(matrix({{0.5, 0.2}}), labels, alpha, 100);
    const auto narrow = fitness_from_scores(matrix({{0.5, 0.4}}), labels, alpha, 100);
    EXPECT_EQ(wide.accuracy, narrow.accuracy);
    EXPECT_GT(wide.fitness, narrow.fitness);
    // log p = -log(1 + exp(-tau * margin))
    EXPECT_NEAR(wide.mean_true_logprob, -std::log1p(std::exp(-30.0)), 1e-13);
    EXPECT_NEAR(narrow.mean_true_logprob, -std::log1p(std::exp(-10.0)), 1e-13);
  }
}

TEST(Fitness, MatchesOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 5, 8, 6);
    const auto o = ts::oracle_fitness(ts::oracle_scores(ts::rows_of(inst.images), ts::rows_of(inst.texts), inst.d),
                                      {inst.images.labels().begin(), inst.images.labels().end()}, 1e3, 100);
    const auto s =
        fitness_from_scores(class_scores(inst.images, inst.texts, inst.d), inst.images.labels(), 1e3, 100);
    EXPECT_EQ(s.accuracy, static_cast<double>(o.accuracy));
    EXPECT_NEAR(s.mean_true_logprob, static_cast<double>(o.mean_true_logprob), 1e-9);
    EXPECT_NEAR(s.fitness, static_cast<double>(o.fitness), 1e-9);
    EXPECT_LE(s.mean_true_logprob, 0.0);
  }
}

TEST(Fitness, NoOverflowAtLargeTau) {
  const auto s = fitness_from_scores(matrix({{1.0, -1.0}, {-1.0, 1.0}}), std::vector<ClassId>{1, 1}, 1.0, 1e4);
  EXPECT_TRUE(std::isfinite(s.fitness));
  EXPECT_NEAR(s.mean_true_logprob, -1e4, 1e-6);
}

TEST(Fitness, MonotoneInTrueClassScore) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int trial = 0; trial < 50; ++trial) {
    ScoreMatrix m(4, 3);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 3; ++c) m(i, c) = u(rng);
    const std::vector<ClassId> labels = {0, 1, 2, 0};
    const auto before = fitness_from_scores(m, labels, 1e3, 100);
    m(2, 2) += 0.05;
    const auto after = fitness_from_scores(m, labels, 1e3, 100);
    EXPECT_GE(after.fitness, before.fitness);
  }
}

TEST(Cache, EmptyDeltaIsNoop) {
  std::mt19937_64 rng(8);
  auto inst = random_instance(rng, 3, 6, 4);
  SimilarityTable table(inst.images, inst.texts);
  const auto cache = make_cache(table, inst.d);
  const auto same = apply_delta(cache, 1, {}, {});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(same.score(i, c), cache.score(i, c));
}

TEST(Cache, AddThenRemoveRestores) {
  std::mt19937_64 rng(9);
  auto inst = random_instance(rng, 3, 6, 4);
  SimilarityTable table(inst.images, inst.texts);
  const auto cache = make_cache(table, inst.d);
  const std::vector<TextId> extra = {inst.d[2][0]};
  const auto back = apply_delta(apply_delta(cache, 0, extra, {}), 0, {}, extra);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(back.score(i, c), cache.score(i, c), 1e-12);
  EXPECT_EQ(code_of([&] { apply_delta(cache, 0, {}, extra); }), ErrorCode::RemoveAbsent);
}

TEST(Cache, RandomDeltasMatchFreshScores) {
  std::mt19937_64 rng(10);
  auto inst = random_instance(rng, 4, 8, 6);
  SimilarityTable table(inst.images, inst.texts);
  auto cache = make_cache(table, inst.d);
  auto d = inst.d;
  std::uniform_int_distribution<std::size_t> pick_class(0, 3), pick_text(0, inst.texts.n_rows() - 1);
  for (int step = 0; step < 20; ++step) {
    const auto c = static_cast<ClassId>(pick_class(rng));
    std::vector<TextId> add = {static_cast<TextId>(pick_text(rng))}, remove;
    if (d[c].size() > 1 && rng() % 2) remove.push_back(d[c][rng() % d[c].size()]);
    cache.apply_delta(c, add, remove);
    for (auto t : remove) d[c].erase(std::find(d[c].begin(), d[c].end(), t));
    d[c].insert(d[c].end(), add.begin(), add.end());
    const auto fresh = class_scores(inst.images, inst.texts, d);
    double worst = 0;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t k = 0; k < 4; ++k) worst = std::max(worst, std::abs(fresh(i, k) - cache.score(i, k)));
    EXPECT_LE(worst, 1e-9);
  }
}

TEST(Pcc, Examples) {
  const std::vector<double> x = {1, 2, 3, 4};
  std::vector<double> neg;
  for (double v : x) neg.push_back(-v);
  EXPECT_NEAR(pcc(x, x), 1.0, 1e-15);
  EXPECT_NEAR(pcc(x, neg), -1.0, 1e-15);
  const std::vector<double> a = {1, 2, 3}, b = {2, 2, 5};
  EXPECT_NEAR(pcc(a, b), static_cast<double>(ts::oracle_pcc(a, b)), 1e-12);
  EXPECT_NEAR(pcc(a, b), 0.866, 1e-3);
  EXPECT_EQ(code_of([&] { pcc(a, std::vector<double>{1, 1, 1}); }), ErrorCode::DegenerateVariance);
  EXPECT_EQ(code_of([&] { pcc(std::vector<double>{1}, std::vector<double>{1}); }), ErrorCode::DegenerateVariance);
}

TEST(Evaluator, CandidateResolution) {
  // Library with synonyms and descriptions bound to a random text store.
  PromptLibrary lib({"a photo of a {}.", "art of {}."}, {}, {{"cat", {"kitty"}}, {"dog", {}}}, {{"small"}, {"loyal"}});
  const auto m = instantiate_manifest(lib, {std::nullopt});
  std::mt19937_64 rng(3);
  std::vector<TextMeta> meta;
  for (const auto& e : m.entries) meta.push_back({e.kind, e.class_id, e.template_id, e.full_text});
  const auto texts = EmbeddingStore::texts(4, 2, ts::random_rows(rng, m.size(), 4), meta, m.fingerprint);
  const auto bound = bind_embeddings(lib, m, texts);
  const auto images = EmbeddingStore::images(4, 2, ts::random_rows(rng, 3, 4), {0, 1, 0});

  CandidatePrompt p({0, 1}, 2);
  p.desc_ids[1] = {7};
  const auto d = resolve(bound, texts, p, {});
  EXPECT_EQ(d[0], (std::vector<TextId>{0, 3}));
  EXPECT_EQ(d[1], (std::vector<TextId>{2, 5, 7}));
  const auto d_syn = resolve(bound, texts, p, {1e3, 100, true});
  EXPECT_EQ(d_syn[0], (std::vector<TextId>{0, 1, 3, 4}));

  Evaluator eval(images, texts, bound, {});
  const auto direct = fitness_from_scores(class_scores(images, texts, d), images.labels(), 1e3, 100);
  const auto cached = eval.evaluate(p);
  EXPECT_NEAR(cached.fitness, direct.fitness, 1e-9);
  EXPECT_EQ(cached.accuracy, direct.accuracy);

  // A description of the wrong class, or a template instance, is rejected.
  CandidatePrompt wrong({0}, 2);
  wrong.desc_ids[0] = {7};
  EXPECT_EQ(code_of([&] { (void)eval.evaluate(wrong); }), ErrorCode::UnboundId);
  wrong.desc_ids[0] = {3};
  EXPECT_EQ(code_of([&] { (void)eval.evaluate(wrong); }), ErrorCode::UnboundId);
  EXPECT_EQ(code_of([&] { (void)eval.evaluate(CandidatePrompt({}, 2)); }), ErrorCode::UnboundId);
}

TEST(Candidate, ValueEqualityAndDigest) {
  CandidatePrompt a({1, 0}, 2), b({0, 1}, 2);
  a.generation_tag = 5;
  b.generation_tag = 9;
  a.desc_ids[1] = {4, 3};
  b.desc_ids[1] = {3, 4};
  EXPECT_EQ(a, b);
  EXPECT_EQ(digest(a), digest(b));
  b.desc_ids[0] = {1};
  EXPECT_NE(a, b);
  EXPECT_NE(digest(a), digest(b));
  EXPECT_EQ(candidate_from_json(to_json(a)), a);
}
