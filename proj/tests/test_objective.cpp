#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace bg = bundlegraph;

namespace {

struct Instance {
  bg::Dataset d;
  bg::ModelGraphs<double> g;
  bg::EmbeddingTable<double> theta;
  std::vector<bg::TrainingTriple> batch;
};

Instance small_instance(std::uint64_t seed, std::size_t dim = 4) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.d = fixtures::random_dataset(10, 8, 12, 30, 35, 25, rng);
  in.g = bg::ModelGraphs<double>::build(in.d);
  in.theta = fixtures::random_table<double>(in.d, dim, rng, 0.5);
  auto r = bg::make_stream(seed, "sampling");
  in.batch = bg::TripleSampler(in.d.ub_train).sample(12, 1, r);
  return in;
}

bg::TrainConfig grad_config(bg::AugmentationKind aug, bg::ContrastMode mode) {
  bg::TrainConfig cfg;
  cfg.dim = 4;
  cfg.layers = 2;
  cfg.lambda.lambda = {0.5, 0.3, 0.2};
  cfg.tau = 0.5;
  cfg.beta1 = 0.7;
  cfg.beta2 = 0.05;
  cfg.aug.kind = aug;
  cfg.aug.edge_drop_rate = 0.3;
  cfg.aug.message_drop_rate = 0.3;
  cfg.aug.noise_eps = 0.2;
  cfg.contrast = mode;
  cfg.scoring = mode == bg::ContrastMode::pairwise_cross ? bg::ScoringMode::per_view_sum
                                                         : bg::ScoringMode::fused;
  return cfg;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    ab += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  return aa == 0 || bb == 0 ? 0.0 : ab / std::sqrt(aa * bb);
}

/// Direct softmax recomputation of the in-batch contrastive loss.
double brute_info_nce(const bg::EmbeddingBlock<double>& a, const bg::EmbeddingBlock<double>& b,
                      const std::vector<bg::Index>& ids, double tau) {
  double total = 0;
  for (auto i : ids) {
    double denom = 0;
    for (auto j : ids) denom += std::exp(cosine(a.row(i), b.row(j)) / tau);
    total += -std::log(std::exp(cosine(a.row(i), b.row(i)) / tau) / denom);
  }
  return total / static_cast<double>(ids.size());
}

}  // namespace

TEST(Bpr, ClosedForms) {
  std::vector<double> p{1.0}, n{1.0};
  EXPECT_NEAR(bg::bpr_loss(p, n), std::log(2.0), 1e-15);
  p[0] = 20;
  n[0] = 0;
  EXPECT_NEAR(bg::bpr_loss(p, n), std::log1p(std::exp(-20.0)), 1e-22);
  EXPECT_NEAR(bg::bpr_loss(p, n), 2.06e-9, 0.005e-9);
  p[0] = -20;
  EXPECT_NEAR(bg::bpr_loss(p, n), 20.0 + std::log1p(std::exp(-20.0)), 1e-12);
}

TEST(Bpr, SumAndMeanReductions) {
  std::vector<double> p{0.5, 2.0, -1.0}, n{0.0, 0.0, 0.0};
  const double s = bg::bpr_loss(p, n, bg::BprReduction::sum);
  EXPECT_NEAR(bg::bpr_loss(p, n, bg::BprReduction::mean), s / 3, 1e-15);
  EXPECT_THROW(bg::bpr_loss(std::vector<double>{1.0}, std::vector<double>{}), std::invalid_argument);
}

TEST(InfoNce, SingleEntityIsExactlyZero) {
  std::mt19937_64 rng(1);
  auto a = fixtures::random_block<double>(3, 4, rng);
  auto b = fixtures::random_block<double>(3, 4, rng);
  std::vector<bg::Index> ids{1};
  EXPECT_EQ(bg::info_nce(a, b, ids, 0.2).loss, 0.0);
}

TEST(InfoNce, TwoOrthogonalEntitiesClosedForm) {
  bg::EmbeddingBlock<double> a(2, 2);
  a(0, 0) = 1;
  a(1, 1) = 3;
  auto b = a;
  std::vector<bg::Index> ids{0, 1};
  const double expect = std::log1p(std::exp(-4.0));
  EXPECT_NEAR(bg::info_nce(a, b, ids, 0.25).loss, expect, 1e-15);
  EXPECT_NEAR(expect, 0.0181499, 1e-7);
}

TEST(InfoNce, MatchesBruteForceSoftmax) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 7;
    auto a = fixtures::random_block<double>(10, 5, rng);
    auto b = fixtures::random_block<double>(10, 5, rng);
    std::vector<bg::Index> ids;
    for (bg::Index i = 0; i < n; ++i) ids.push_back(i);
    const double tau = 0.1 + 0.05 * trial;
    const double loss = bg::info_nce(a, b, ids, tau).loss;
    EXPECT_NEAR(loss, brute_info_nce(a, b, ids, tau), 1e-12);
    // Lower bound: each anchor pays at least -log of its largest possible softmax share.
    EXPECT_GE(loss, -std::log(1.0 / (1.0 + (n - 1) * std::exp(-2.0 / tau))) - 1e-12);
  }
}

TEST(InfoNce, ZeroNormRowsCountedAndTreatedAsZeroCosine) {
  bg::EmbeddingBlock<double> a(2, 2), b(2, 2);
  a(0, 0) = 1;
  b(0, 0) = 1;
  b(1, 1) = 1;  // a row 1 is zero
  std::vector<bg::Index> ids{0, 1};
  auto r = bg::info_nce(a, b, ids, 1.0);
  EXPECT_EQ(r.zero_norm_pairs, 2u);
  // Anchor 0: logits (1, 0); anchor 1: logits (0, 0).
  const double expect = 0.5 * (-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)) + std::log(2.0));
  EXPECT_NEAR(r.loss, expect, 1e-15);
}

TEST(L2Reg, Definitions) {
  bg::EmbeddingTable<double> t(2, 2, 1, 3);
  std::vector<bg::TrainingTriple> batch{{0, 0, 1}};
  EXPECT_EQ(bg::l2_reg(t, batch), 0.0);
  t.users(0, 1) = 1.0;
  EXPECT_DOUBLE_EQ(bg::l2_reg(t, batch), 1.0);
}

TEST(L2Reg, MatchesScalarRecompute) {
  std::mt19937_64 rng(3);
  auto in = small_instance(3);
  double s = 0;
  for (const auto& tr : in.batch)
    for (std::size_t j = 0; j < 4; ++j)
      s += in.theta.users(tr.user, j) * in.theta.users(tr.user, j) +
           in.theta.bundles(tr.pos, j) * in.theta.bundles(tr.pos, j) +
           in.theta.bundles(tr.neg, j) * in.theta.bundles(tr.neg, j);
  EXPECT_NEAR(bg::l2_reg(in.theta, in.batch), s / in.batch.size(), 1e-13);
}

TEST(Objective, TotalEqualsIndependentlyRecomputedTerms) {
  auto in = small_instance(4);
  auto cfg = grad_config(bg::AugmentationKind::noise, bg::ContrastMode::fused_self);
  auto rng = bg::make_stream(4, "augmentation");
  auto plans = bg::draw_step_plans(in.g, cfg, rng);
  auto lb = bg::evaluate_objective(in.g, in.theta, cfg, in.batch, plans);

  auto opt = cfg.view_options();
  auto clean = bg::fuse(bg::compute_views(in.theta, in.g, plans.clean, opt), cfg.lambda);
  double bpr = 0;
  for (const auto& t : in.batch) {
    double pos = 0, neg = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      pos += clean.users(t.user, j) * clean.bundles(t.pos, j);
      neg += clean.users(t.user, j) * clean.bundles(t.neg, j);
    }
    bpr += std::log1p(std::exp(-(pos - neg)));
  }
  bpr /= in.batch.size();
  auto f1 = bg::fuse(bg::compute_views(in.theta, in.g, plans.first->plan, opt), cfg.lambda);
  auto f2 = bg::fuse(bg::compute_views(in.theta, in.g, plans.second->plan, opt), cfg.lambda);
  const auto users = bg::unique_users(in.batch);
  const auto bundles = bg::unique_positive_bundles(in.batch);
  const double cu = brute_info_nce(f1.users, f2.users, users, cfg.tau);
  const double cb = brute_info_nce(f1.bundles, f2.bundles, bundles, cfg.tau);
  const double reg = bg::l2_reg(in.theta, in.batch);
  EXPECT_NEAR(lb.bpr, bpr, 1e-12);
  EXPECT_NEAR(lb.contrast_user, cu, 1e-12);
  EXPECT_NEAR(lb.contrast_bundle, cb, 1e-12);
  EXPECT_NEAR(lb.total, bpr + cfg.beta1 * (cu + cb) / 2 + cfg.beta2 * reg, 1e-10);
}

TEST(Objective, ContrastiveTermCounts) {
  auto in = small_instance(5);
  auto rng = bg::make_stream(5, "augmentation");
  auto fused = grad_config(bg::AugmentationKind::noise, bg::ContrastMode::fused_self);
  auto cross = grad_config(bg::AugmentationKind::noise, bg::ContrastMode::pairwise_cross);
  EXPECT_EQ(bg::compute_gradients(in.g, in.theta, fused, in.batch, rng).first.contrast_terms, 2u);
  EXPECT_EQ(bg::compute_gradients(in.g, in.theta, cross, in.batch, rng).first.contrast_terms, 6u);
  for (bg::ViewSet vs : {bg::ViewSet{true, true, false}, bg::ViewSet{true, false, false}}) {
    fused.views = cross.views = vs;
    fused.lambda = cross.lambda = bg::FusionCoefficients::for_views({0.5, 0.3, 0.2}, vs);
    const std::size_t pairs = vs.count() * (vs.count() - 1) / 2;
    EXPECT_EQ(bg::compute_gradients(in.g, in.theta, fused, in.batch, rng).first.contrast_terms, 2u);
    EXPECT_EQ(bg::compute_gradients(in.g, in.theta, cross, in.batch, rng).first.contrast_terms, 2 * pairs);
  }
}

TEST(PairwiseContrast, MatchesBruteForceOverSixTerms) {
  auto in = small_instance(6);
  auto cfg = grad_config(bg::AugmentationKind::noise, bg::ContrastMode::pairwise_cross);
  auto rng = bg::make_stream(6, "augmentation");
  auto plans = bg::draw_step_plans(in.g, cfg, rng);
  auto v1 = bg::compute_views(in.theta, in.g, plans.first->plan, cfg.view_options());
  auto v2 = bg::compute_views(in.theta, in.g, plans.second->plan, cfg.view_options());
  const auto users = bg::unique_users(in.batch);
  const auto bundles = bg::unique_positive_bundles(in.batch);
  auto pc = bg::pairwise_cross_contrast(v1, v2, cfg.views, users, bundles, cfg.tau);
  double u = 0, b = 0;
  const std::pair<bg::View, bg::View> pairs[] = {
      {bg::View::UB, bg::View::UI}, {bg::View::UB, bg::View::BI}, {bg::View::UI, bg::View::BI}};
  for (auto [x, y] : pairs) {
    u += brute_info_nce(v1.users(x), v2.users(y), users, cfg.tau);
    b += brute_info_nce(v1.bundles(x), v2.bundles(y), bundles, cfg.tau);
  }
  EXPECT_EQ(pc.terms, 6u);
  EXPECT_NEAR(pc.user, u / 3, 1e-12);
  EXPECT_NEAR(pc.bundle, b / 3, 1e-12);
}

TEST(PairwiseContrast, IdenticalViewsReduceToFusedSelf) {
  std::mt19937_64 rng(7);
  auto base_u1 = fixtures::random_block<double>(6, 4, rng), base_u2 = fixtures::random_block<double>(6, 4, rng);
  auto base_b1 = fixtures::random_block<double>(5, 4, rng), base_b2 = fixtures::random_block<double>(5, 4, rng);
  bg::ViewRepresentations<double> v1(6, 5, 1, 4), v2(6, 5, 1, 4);
  for (bg::View x : bg::kAllViews) {
    v1.users(x) = base_u1;
    v2.users(x) = base_u2;
    v1.bundles(x) = base_b1;
    v2.bundles(x) = base_b2;
  }
  std::vector<bg::Index> uids{0, 2, 3, 5}, bids{1, 4};
  auto pc = bg::pairwise_cross_contrast(v1, v2, bg::ViewSet{}, uids, bids, 0.3);
  auto f1 = bg::fuse(v1, bg::FusionCoefficients{}), f2 = bg::fuse(v2, bg::FusionCoefficients{});
  EXPECT_NEAR(pc.user, bg::info_nce(f1.users, f2.users, uids, 0.3).loss, 1e-12);
  EXPECT_NEAR(pc.bundle, bg::info_nce(f1.bundles, f2.bundles, bids, 0.3).loss, 1e-12);
}

TEST(Gradient, MatchesFiniteDifferencesForEveryModeAndAugmentation) {
  for (auto mode : {bg::ContrastMode::fused_self, bg::ContrastMode::pairwise_cross, bg::ContrastMode::off}) {
    for (auto aug : {bg::AugmentationKind::none, bg::AugmentationKind::edge_dropout,
                     bg::AugmentationKind::message_dropout, bg::AugmentationKind::noise}) {
      auto in = small_instance(8);
      auto cfg = grad_config(aug, mode);
      auto rng = bg::make_stream(8, "augmentation");
      auto plans = bg::draw_step_plans(in.g, cfg, rng);
      bg::EmbeddingTable<double> grad;
      bg::evaluate_objective(in.g, in.theta, cfg, in.batch, plans, &grad);
      auto res = fixtures::finite_difference_check(in.theta, grad, [&](const bg::EmbeddingTable<double>& t) {
        return bg::evaluate_objective(in.g, t, cfg, in.batch, plans).total;
      });
      EXPECT_LT(res.max_rel_error, 1e-4) << bg::to_string(mode) << "/" << bg::to_string(aug) << " " << res.worst;
    }
  }
}

TEST(Gradient, LayerCountDivisorAndSumReduction) {
  auto in = small_instance(9);
  auto cfg = grad_config(bg::AugmentationKind::message_dropout, bg::ContrastMode::fused_self);
  cfg.pool = bg::PoolDivisor::k;
  cfg.bpr_reduction = bg::BprReduction::sum;
  auto rng = bg::make_stream(9, "augmentation");
  auto plans = bg::draw_step_plans(in.g, cfg, rng);
  bg::EmbeddingTable<double> grad;
  bg::evaluate_objective(in.g, in.theta, cfg, in.batch, plans, &grad);
  auto res = fixtures::finite_difference_check(in.theta, grad, [&](const bg::EmbeddingTable<double>& t) {
    return bg::evaluate_objective(in.g, t, cfg, in.batch, plans).total;
  });
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(Gradient, SingleTripleTiedScoresClosedForm) {
  // One user, two bundles, no items; every view row shares one direction and
  // both bundles start equal, so delta = 0 and dL/de = -1/2 * d(delta)/de.
  bg::Dataset d;
  d.num_users = 1;
  d.num_bundles = 2;
  d.num_items = 1;
  d.ub_train = bg::InteractionMatrix(1, 2, bg::RelationKind::UB, {{0, 0}});
  d.ub_valid = d.ub_test = bg::InteractionMatrix(1, 2, bg::RelationKind::UB, {});
  d.ui = bg::InteractionMatrix(1, 1, bg::RelationKind::UI, {});
  d.bi = bg::InteractionMatrix(2, 1, bg::RelationKind::BI, {});
  auto g = bg::ModelGraphs<double>::build(d);
  bg::EmbeddingTable<double> t(1, 2, 1, 2);
  t.users(0, 0) = 1;
  t.bundles(0, 0) = 1;
  t.bundles(1, 0) = 1;
  bg::TrainConfig cfg;
  cfg.dim = 2;
  cfg.layers = 1;
  cfg.views = {true, false, false};
  cfg.lambda.lambda = {1, 0, 0};
  cfg.beta1 = 0;
  cfg.beta2 = 0;
  cfg.contrast = bg::ContrastMode::off;
  std::vector<bg::TrainingTriple> batch{{0, 0, 1}};
  auto rng = bg::make_stream(1, "augmentation");
  auto [lb, grad] = bg::compute_gradients(g, t, cfg, batch, rng);
  // UB view with K=1: e_u = (E_u + E_b0)/2, e_b0 = (E_b0 + E_u)/2, e_b1 = E_b1/2.
  EXPECT_NEAR(lb.bpr, std::log(1 + std::exp(-(1.0 - 0.5))), 1e-15);
  t.bundles(1, 0) = 2;  // e_b1 = (1,0), e_b0 = (1,0), e_u = (1,0): delta = 0
  auto [lb2, grad2] = bg::compute_gradients(g, t, cfg, batch, rng);
  EXPECT_NEAR(lb2.bpr, std::log(2.0), 1e-15);
  // dL/d delta = -1/2. delta = e_u.(e_b0 - e_b1), e_b0 - e_b1 = (E_u + E_b0 - E_b1)/2.
  // d delta/dE_u = (e_b0 - e_b1)/2 + e_u/2 = (0,0)/2 + (1,0)/2.
  EXPECT_NEAR(grad2.users(0, 0), -0.5 * 0.5, 1e-15);
  // d delta/dE_b0 = (e_b0 - e_b1)/2 + e_u/2 = (1/2, 0); d delta/dE_b1 = -e_u/2.
  EXPECT_NEAR(grad2.bundles(0, 0), -0.5 * 0.5, 1e-15);
  EXPECT_NEAR(grad2.bundles(1, 0), -0.5 * -0.5, 1e-15);
  EXPECT_EQ(grad2.users(0, 1), 0.0);
}

TEST(Gradient, ZeroBeta1RemovesContrastiveContribution) {
  auto in = small_instance(10);
  auto cfg = grad_config(bg::AugmentationKind::noise, bg::ContrastMode::fused_self);
  cfg.beta1 = 0;
  auto off = cfg;
  off.contrast = bg::ContrastMode::off;
  auto r1 = bg::make_stream(10, "augmentation");
  auto r2 = bg::make_stream(10, "augmentation");
  auto a = bg::compute_gradients(in.g, in.theta, cfg, in.batch, r1);
  auto b = bg::compute_gradients(in.g, in.theta, off, in.batch, r2);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(a.first.total, b.first.total);
}

TEST(Gradient, NonFiniteInputsRaiseNumericErrorNamingTerm) {
  auto in = small_instance(11);
  auto cfg = grad_config(bg::AugmentationKind::none, bg::ContrastMode::fused_self);
  in.theta.users(in.batch[0].user, 0) = std::numeric_limits<double>::quiet_NaN();
  auto rng = bg::make_stream(11, "augmentation");
  try {
    bg::compute_gradients(in.g, in.theta, cfg, in.batch, rng);
    FAIL() << "expected NumericError";
  } catch (const bg::NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("bpr"), std::string::npos) << e.what();
  }
}

TEST(Sampler, ForcedNegative) {
  bg::InteractionMatrix ub(1, 2, bg::RelationKind::UB, {{0, 0}});
  bg::TripleSampler s(ub);
  auto rng = bg::make_stream(1, "sampling");
  for (const auto& t : s.sample(200, 1, rng)) EXPECT_EQ(t, (bg::TrainingTriple{0, 0, 1}));
}

TEST(Sampler, NegativesNeverCollideWithTrainPositives) {
  std::mt19937_64 r(2);
  auto d = fixtures::random_dataset(30, 20, 5, 200, 5, 5, r);
  bg::TripleSampler s(d.ub_train);
  auto rng = bg::make_stream(2, "sampling");
  std::size_t skipped = 0;
  auto batch = s.sample(100000, 1, rng, &skipped);
  EXPECT_EQ(skipped, 0u);
  ASSERT_EQ(batch.size(), 100000u);
  for (const auto& t : batch) {
    ASSERT_TRUE(d.ub_train.contains(t.user, t.pos));
    ASSERT_FALSE(d.ub_train.contains(t.user, t.neg));
  }
}

TEST(Sampler, PositiveFrequenciesUniform) {
  std::mt19937_64 r(3);
  auto d = fixtures::random_dataset(10, 10, 5, 40, 5, 5, r);
  const std::size_t E = d.ub_train.nnz();
  bg::TripleSampler s(d.ub_train);
  auto rng = bg::make_stream(3, "sampling");
  const std::size_t N = 200000;
  std::map<std::pair<bg::Index, bg::Index>, std::size_t> counts;
  for (const auto& t : s.sample(N, 1, rng)) ++counts[{t.user, t.pos}];
  EXPECT_EQ(counts.size(), E);
  const double p = 1.0 / static_cast<double>(E);
  const double mean = N * p, sd = std::sqrt(N * p * (1 - p));
  for (const auto& [k, c] : counts) EXPECT_NEAR(static_cast<double>(c), mean, 3 * sd);
}

TEST(Sampler, SaturatedUserIsSkippedAndCounted) {
  bg::InteractionMatrix ub(2, 2, bg::RelationKind::UB, {{0, 0}, {0, 1}});
  bg::TripleSampler s(ub);
  auto rng = bg::make_stream(4, "sampling");
  std::size_t skipped = 0;
  auto batch = s.sample(5, 1, rng, &skipped);
  EXPECT_TRUE(batch.empty());
  EXPECT_EQ(skipped, 5u);
}

TEST(Sampler, MultipleNegativesPerPositive) {
  std::mt19937_64 r(5);
  auto d = fixtures::random_dataset(10, 10, 5, 30, 5, 5, r);
  bg::TripleSampler s(d.ub_train);
  auto rng = bg::make_stream(5, "sampling");
  auto batch = s.sample(50, 3, rng);
  ASSERT_EQ(batch.size(), 150u);
  for (std::size_t i = 0; i < 150; i += 3) {
    EXPECT_EQ(batch[i].user, batch[i + 2].user);
    EXPECT_EQ(batch[i].pos, batch[i + 2].pos);
  }
}
