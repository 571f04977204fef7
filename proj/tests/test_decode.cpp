#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fixtures.hpp"
#include "rotatek/decode.hpp"

using namespace rotatek;

namespace {

DecodeConfig path(DecodePath p) {
  DecodeConfig c;
  c.path = p;
  return c;
}

// Partials for an arbitrary split of (scores, values) into `ways` contiguous chunks.
std::vector<SoftmaxPartial> split_partials(const Vector& scores, const Matrix& values, std::size_t ways,
                                           oracle::Rng& rng) {
  std::vector<std::size_t> cuts{0, scores.size()};
  while (cuts.size() < ways + 1) cuts.push_back(1 + rng.index(scores.size() - 1));
  std::sort(cuts.begin(), cuts.end());
  std::vector<SoftmaxPartial> parts;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    auto p = SoftmaxPartial::empty_of(values.cols());
    for (std::size_t n = cuts[i]; n < cuts[i + 1]; ++n) p.push(scores[n], values.row(n));
    parts.push_back(std::move(p));
  }
  return parts;
}

}  // namespace

TEST(SplitFactor, Examples) {
  DecodeConfig cfg;
  EXPECT_EQ(split_factor(130, cfg), 3u);
  EXPECT_EQ(split_factor(0, cfg), 1u);
  EXPECT_EQ(split_factor(10000, cfg), 64u);
  EXPECT_EQ(split_factor(64, cfg), 1u);
  EXPECT_EQ(split_factor(65, cfg), 2u);
}

TEST(SplitRanges, CoverEveryTokenOnce) {
  DecodeConfig cfg;
  for (std::size_t s : {0u, 1u, 63u, 64u, 65u, 130u, 5000u, 10000u}) {
    const auto ranges = split_ranges(s, cfg);
    EXPECT_EQ(ranges.size(), split_factor(s, cfg));
    std::size_t next = 0;
    for (auto [b, e] : ranges) {
      EXPECT_EQ(b, next);
      EXPECT_LE(b, e);
      next = e;
    }
    EXPECT_EQ(next, s);
  }
}

TEST(DecodeScores, FullRankMatchesExact) {
  oracle::Rng rng(41);
  const SequenceLayout lay{80, 12, 32, 1, 1};
  const auto in = fixture::random_inputs<float>(lay, rng);
  const auto cache = prefill_compress(in, keep_all(80), fixture::rank(32), lay);
  const Vector q = oracle::random_vector(32, rng);
  const Matrix keys = fixture::full_keys(in.visual_keys[0], in.text_keys[0], keep_all(80));
  EXPECT_LE(oracle::max_abs_diff(decode_scores(q, cache, 0), oracle::scores(q, keys)), 1e-5);
}

TEST(DecodeScores, ZeroQueryGivesZeroScores) {
  oracle::Rng rng(42);
  const SequenceLayout lay{20, 5, 8, 1, 1};
  const auto cache = prefill_compress(fixture::random_inputs<float>(lay, rng), keep_all(20), fixture::rank(3), lay);
  for (double s : decode_scores(Vector(8, 0.0), cache, 0)) EXPECT_EQ(s, 0.0);
}

TEST(DecodeScores, VisualScoresMatchProjectorFormula) {
  oracle::Rng rng(43);
  const SequenceLayout lay{60, 4, 24, 1, 1};
  auto in = fixture::random_inputs<double>(lay, rng);
  for (std::size_t r = 0; r < lay.n_visual; ++r) in.visual_keys[0](r, 2) += 6.0;
  const auto cache = prefill_compress(in, keep_all(60), fixture::rank(7), lay);
  const auto& rot = cache.heads[0].rotation;
  const Vector q = oracle::random_vector(24, rng);
  const Vector got = decode_scores(q, cache, 0);
  const Vector want = oracle::projector_scores(q, in.visual_keys[0], rot.basis, rot.mean);
  for (std::size_t n = 0; n < lay.n_visual; ++n) EXPECT_NEAR(got[n], want[n], 1e-4);
}

TEST(DecodeScores, TextScoresIndependentOfRank) {
  oracle::Rng rng(44);
  const SequenceLayout lay{30, 10, 16, 1, 1};
  const auto in = fixture::random_inputs<float>(lay, rng);
  const Vector q = oracle::random_vector(16, rng);
  const Vector a = decode_scores(q, prefill_compress(in, keep_all(30), fixture::rank(2), lay), 0);
  const Vector b = decode_scores(q, prefill_compress(in, keep_all(30), fixture::rank(11), lay), 0);
  for (std::size_t n = 30; n < 40; ++n) EXPECT_EQ(a[n], b[n]);
}

TEST(AttentionOutput, SingleTokenReturnsItsValue) {
  oracle::Rng rng(45);
  const SequenceLayout lay{1, 0, 8, 1, 1};
  const auto in = fixture::random_inputs<double>(lay, rng);
  const auto cache = prefill_compress(in, keep_all(1), fixture::rank(2), lay);
  for (auto p : {DecodePath::monolithic, DecodePath::split_k}) {
    const Vector out = attention_output(oracle::random_vector(8, rng), cache, 0, path(p));
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(out[j], in.visual_values[0](0, j));
  }
}

TEST(AttentionOutput, ZeroQueryAveragesValues) {
  oracle::Rng rng(46);
  const SequenceLayout lay{70, 9, 8, 1, 1};
  const auto in = fixture::random_inputs<double>(lay, rng);
  const auto cache = prefill_compress(in, keep_all(70), fixture::rank(3), lay);
  Vector mean(8, 0.0);
  for (std::size_t r = 0; r < 70; ++r)
    for (std::size_t j = 0; j < 8; ++j) mean[j] += in.visual_values[0](r, j) / 79.0;
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t j = 0; j < 8; ++j) mean[j] += in.text_values[0](r, j) / 79.0;
  for (auto p : {DecodePath::monolithic, DecodePath::split_k})
    EXPECT_LE(oracle::max_abs_diff(attention_output(Vector(8, 0.0), cache, 0, path(p)), mean), 1e-12);
}

TEST(AttentionOutput, SplitMatchesMonolithicSinglePrecision) {
  oracle::Rng rng(47);
  for (std::size_t n : {1u, 63u, 64u, 65u, 130u, 700u}) {
    const SequenceLayout lay{n, 7, 32, 2, 1};
    const auto cache = prefill_compress(fixture::random_inputs<float>(lay, rng, 8, 2.0), keep_all(n),
                                        fixture::rank(8), lay);
    const Vector q = oracle::random_vector(32, rng, 2.0);
    const Vector a = attention_output(q, cache, 1, path(DecodePath::split_k));
    const Vector b = attention_output(q, cache, 1, path(DecodePath::monolithic));
    EXPECT_LE(oracle::max_abs_diff(a, b), 1e-5) << "S_v=" << n;
  }
}

TEST(AttentionOutput, WeightsSumToOne) {
  oracle::Rng rng(48);
  const SequenceLayout lay{90, 10, 16, 1, 1};
  auto in = fixture::random_inputs<double>(lay, rng, 8, 3.0);
  for (auto& v : in.visual_values) std::fill(v.data().begin(), v.data().end(), 1.0);
  for (auto& v : in.text_values) std::fill(v.data().begin(), v.data().end(), 1.0);
  const auto cache = prefill_compress(in, keep_all(90), fixture::rank(4), lay);
  for (auto p : {DecodePath::monolithic, DecodePath::split_k}) {
    const Vector out = attention_output(oracle::random_vector(16, rng, 3.0), cache, 0, path(p));
    for (double x : out) EXPECT_NEAR(x, 1.0, 1e-6);
  }
}

TEST(MergePartials, EmptyIsNeutral) {
  oracle::Rng rng(49);
  const Matrix values = oracle::random_matrix(5, 3, rng);
  auto p = SoftmaxPartial::empty_of(3);
  for (std::size_t n = 0; n < 5; ++n) p.push(rng.normal(), values.row(n));
  const std::vector<SoftmaxPartial> parts{p, SoftmaxPartial::empty_of(3)};
  const auto m = merge_partials(parts);
  EXPECT_DOUBLE_EQ(m.m, p.m);
  EXPECT_DOUBLE_EQ(m.l, p.l);
  EXPECT_EQ(m.acc, p.acc);
}

TEST(MergePartials, SingleWayEqualsUnsplit) {
  oracle::Rng rng(50);
  const Matrix values = oracle::random_matrix(40, 4, rng);
  auto p = SoftmaxPartial::empty_of(4);
  for (std::size_t n = 0; n < 40; ++n) p.push(rng.normal(), values.row(n));
  const auto m = merge_partials(std::vector<SoftmaxPartial>{p});
  EXPECT_EQ(m.acc, p.acc);
  EXPECT_EQ(m.l, p.l);
}

TEST(MergePartials, SevenWaySplitAnyPermutation) {
  oracle::Rng rng(51);
  const Vector scores = oracle::random_vector(300, rng, 3.0);
  const Matrix values = oracle::random_matrix(300, 6, rng);
  const Vector want = oracle::softmax_weighted(scores, values);
  auto parts = split_partials(scores, values, 7, rng);
  for (int perm = 0; perm < 20; ++perm) {
    std::shuffle(parts.begin(), parts.end(), rng.engine());
    EXPECT_LE(oracle::max_abs_diff(finalize(merge_partials(parts), 0.0), want), 1e-6);
  }
}

TEST(MergePartials, Associative) {
  oracle::Rng rng(52);
  const Vector scores = oracle::random_vector(90, rng, 4.0);
  const Matrix values = oracle::random_matrix(90, 5, rng);
  auto parts = split_partials(scores, values, 3, rng);
  const auto ab = merge_partials(std::vector<SoftmaxPartial>{parts[0], parts[1]});
  const auto bc = merge_partials(std::vector<SoftmaxPartial>{parts[1], parts[2]});
  const auto left = merge_partials(std::vector<SoftmaxPartial>{ab, parts[2]});
  const auto right = merge_partials(std::vector<SoftmaxPartial>{parts[0], bc});
  EXPECT_NEAR(left.m, right.m, 1e-9 * std::abs(left.m));
  EXPECT_NEAR(left.l, right.l, 1e-9 * left.l);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(left.acc[j], right.acc[j], 1e-9 * std::max(1.0, std::abs(left.acc[j])));
}

TEST(MergePartials, EmptyListRejected) {
  EXPECT_THROW(merge_partials(std::vector<SoftmaxPartial>{}), EmptyInputError);
}

TEST(DecodeBatch, UngroupedEqualsPerHeadLoop) {
  oracle::Rng rng(53);
  const SequenceLayout lay{50, 6, 16, 3, 3};
  const auto cache = prefill_compress(fixture::random_inputs<float>(lay, rng), keep_all(50), fixture::rank(5), lay);
  std::vector<Vector> qs;
  for (int h = 0; h < 3; ++h) qs.push_back(oracle::random_vector(16, rng));
  const DecodeConfig cfg;
  const auto batch = decode_batch(qs, cache, cfg);
  for (std::size_t h = 0; h < 3; ++h) EXPECT_EQ(batch[h], attention_output(qs[h], cache, h, cfg));
}

TEST(DecodeBatch, GroupedHeadsShareKvHead) {
  oracle::Rng rng(54);
  const SequenceLayout lay{40, 4, 8, 4, 2};
  const auto cache = prefill_compress(fixture::random_inputs<float>(lay, rng), keep_all(40), fixture::rank(8), lay);
  const Vector q = oracle::random_vector(8, rng);
  const std::vector<Vector> qs(4, q);
  const auto out = decode_batch(qs, cache, DecodeConfig{});
  EXPECT_EQ(out[0], out[1]);
  EXPECT_EQ(out[2], out[3]);
  EXPECT_NE(out[0], out[2]);
}

TEST(DecodeBatch, WrongQueryCountRejected) {
  oracle::Rng rng(55);
  const SequenceLayout lay{10, 2, 8, 2, 1};
  const auto cache = prefill_compress(fixture::random_inputs<float>(lay, rng), keep_all(10), fixture::rank(2), lay);
  EXPECT_THROW(decode_batch(std::vector<Vector>(3, Vector(8)), cache, DecodeConfig{}), DimensionError);
}

TEST(DecodeConfig, Validation) {
  DecodeConfig c;
  c.block_n = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_decode_path("monolithic"), DecodePath::monolithic);
  EXPECT_THROW(parse_decode_path("fused"), ConfigError);
}
