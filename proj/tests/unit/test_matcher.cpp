#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "cola/matcher/matcher.hpp"
#include "support.hpp"

using namespace cola;
using cola::test::random_image;
using cola::test::random_mat;
using cola::test::tiny_config;

namespace {

// Direct evaluation: exp of scaled negative distances over their sum.
std::vector<long double> naive_posterior(const Mat<double>& S, const std::vector<Mat<double>>& cs, double sigma) {
  std::vector<long double> w;
  long double total = 0;
  for (const auto& c : cs) {
    long double d = 0;
    for (Eigen::Index r = 0; r < S.rows(); ++r)
      for (Eigen::Index k = 0; k < S.cols(); ++k) {
        const long double diff = static_cast<long double>(S(r, k)) - c(r, k);
        d += diff * diff;
      }
    w.push_back(std::exp(-d / (2.0L * sigma * sigma)));
    total += w.back();
  }
  for (auto& v : w) v /= total;
  return w;
}

Mat<double> row2(double a, double b) {
  Mat<double> m(1, 2);
  m << a, b;
  return m;
}

}  // namespace

TEST(Posterior, MatchesNaiveOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat<double> S = random_mat<double>(rng, 3, 4, 0.3);
    std::vector<Mat<double>> cs;
    for (int i = 0; i < 7; ++i) cs.push_back(random_mat<double>(rng, 3, 4, 0.3));
    const double sigma = 0.4;
    const auto p = matcher::class_posterior(S, cs, sigma);
    const auto q = naive_posterior(S, cs, sigma);
    for (int i = 0; i < 7; ++i) EXPECT_NEAR(p.probs(i), static_cast<double>(q[i]), 1e-12);
    EXPECT_NEAR(p.probs.sum(), 1.0, 1e-12);
  }
}

TEST(Posterior, TwoClassWorkedExample) {
  const double sigma = std::sqrt(2.0) / 2.0;
  const auto p = matcher::class_posterior(row2(0, 0), {row2(1, 0), row2(0, 2)}, sigma);
  const double a = std::exp(-1.0), b = std::exp(-4.0);
  EXPECT_NEAR(p.probs(0), a / (a + b), 1e-12);
  EXPECT_NEAR(p.probs(1), b / (a + b), 1e-12);
  EXPECT_NEAR(p.probs(0), 0.9526, 5e-5);
  EXPECT_NEAR(p.probs(1), 0.0474, 5e-5);
}

TEST(Posterior, SingleClassIsCertain) {
  Rng rng(1);
  const auto p = matcher::class_posterior(random_mat<double>(rng, 2, 2), {random_mat<double>(rng, 2, 2)}, 0.1);
  EXPECT_EQ(p.probs.size(), 1);
  EXPECT_DOUBLE_EQ(p.probs(0), 1.0);
}

TEST(Posterior, EquidistantCentroidsGiveUniform) {
  const auto p = matcher::class_posterior(row2(0, 0), {row2(1, 0), row2(0, 1), row2(-1, 0), row2(0, -1)}, 0.3);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(p.probs(i), 0.25, 1e-15);
}

TEST(Posterior, FarAwayLatentStaysFinite) {
  const auto p = matcher::class_posterior(row2(1e4, 0), {row2(0, 0), row2(1, 0)}, 0.01);
  EXPECT_TRUE(p.probs.allFinite());
  EXPECT_NEAR(p.probs.sum(), 1.0, 1e-12);
  EXPECT_EQ(matcher::argmax_class(p, {0, 1}), 1u);
}

TEST(Posterior, ArgmaxDoesNotDependOnSigma) {
  Rng rng(40);
  std::vector<Mat<double>> cs;
  for (int i = 0; i < 9; ++i) cs.push_back(random_mat<double>(rng, 2, 3));
  std::vector<int> ids(9);
  for (int i = 0; i < 9; ++i) ids[i] = i;
  for (int t = 0; t < 20; ++t) {
    const Mat<double> S = random_mat<double>(rng, 2, 3);
    const auto ref = matcher::argmax_class(matcher::class_posterior(S, cs, 1.0), ids);
    for (double sigma : {0.05, 0.3, 3.0, 40.0}) EXPECT_EQ(matcher::argmax_class(matcher::class_posterior(S, cs, sigma), ids), ref);
  }
}

TEST(Posterior, ConsistentComponentPermutationChangesNothing) {
  Rng rng(41);
  const Mat<double> S = random_mat<double>(rng, 3, 2);
  std::vector<Mat<double>> cs, pcs;
  for (int i = 0; i < 5; ++i) cs.push_back(random_mat<double>(rng, 3, 2));
  auto swap01 = [](Mat<double> m) {
    m.row(0).swap(m.row(2));
    return m;
  };
  for (const auto& c : cs) pcs.push_back(swap01(c));
  const auto a = matcher::class_posterior(S, cs, 0.5);
  const auto b = matcher::class_posterior(swap01(S), pcs, 0.5);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(a.probs(i), b.probs(i), 1e-14);
}

TEST(Posterior, CommonTranslationChangesNothing) {
  Rng rng(42);
  const Mat<double> S = random_mat<double>(rng, 2, 2);
  const Mat<double> shift = random_mat<double>(rng, 2, 2, 3.0);
  std::vector<Mat<double>> cs, moved;
  for (int i = 0; i < 6; ++i) {
    cs.push_back(random_mat<double>(rng, 2, 2));
    moved.push_back(cs.back() + shift);
  }
  const auto a = matcher::class_posterior(S, cs, 0.7);
  const auto b = matcher::class_posterior(Mat<double>(S + shift), moved, 0.7);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(a.probs(i), b.probs(i), 1e-12);
}

TEST(Posterior, BlockingIsBitIdentical) {
  Rng rng(43);
  const Mat<double> S = random_mat<double>(rng, 3, 8);
  std::vector<Mat<double>> cs;
  for (int i = 0; i < 1000; ++i) cs.push_back(random_mat<double>(rng, 3, 8));
  const auto whole = matcher::class_posterior(S, cs, 0.5, 0);
  for (std::size_t block : {1u, 7u, 256u, 999u}) {
    const auto part = matcher::class_posterior(S, cs, 0.5, block);
    EXPECT_EQ(part.log_probs, whole.log_probs);
  }
}

TEST(Posterior, BadInputs) {
  Rng rng(44);
  const Mat<double> S = random_mat<double>(rng, 2, 2);
  EXPECT_THROW(matcher::class_posterior(S, std::vector<Mat<double>>{}, 0.5), InvalidArgument);
  EXPECT_THROW(matcher::class_posterior(S, {S}, 0.0), InvalidArgument);
  EXPECT_THROW(matcher::class_posterior(S, {random_mat<double>(rng, 3, 2)}, 0.5), ShapeError);
}

TEST(Argmax, TiesGoToLowestClassId) {
  matcher::ClassPosterior p;
  p.log_probs = Eigen::VectorXd::Constant(3, std::log(1.0 / 3));
  p.probs = p.log_probs.array().exp();
  EXPECT_EQ(matcher::argmax_class(p, {7, 3, 5}), 1u);
}

TEST(Retrieve, MatchesExhaustiveSort) {
  Rng rng(50);
  const Mat<double> q = random_mat<double>(rng, 2, 3);
  std::vector<Mat<double>> cs;
  for (int i = 0; i < 40; ++i) cs.push_back(random_mat<double>(rng, 2, 3));
  std::vector<std::pair<double, std::size_t>> ref;
  for (std::size_t i = 0; i < cs.size(); ++i) ref.emplace_back((q - cs[i]).squaredNorm(), i);
  std::sort(ref.begin(), ref.end());
  const auto top = matcher::retrieve_topk(q, cs, 10);
  ASSERT_EQ(top.size(), 10u);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(top[i].index, ref[i].second);
    EXPECT_NEAR(top[i].score, -ref[i].first, 1e-12);
  }
}

TEST(Retrieve, QueryInSetRanksFirstAndEqualDistancesByIndex) {
  Rng rng(51);
  std::vector<Mat<double>> cs;
  for (int i = 0; i < 8; ++i) cs.push_back(random_mat<double>(rng, 2, 2));
  const auto top = matcher::retrieve_topk(cs[5], cs, 3);
  EXPECT_EQ(top[0].index, 5u);
  EXPECT_EQ(top[0].score, 0.0);
  const auto tied = matcher::retrieve_topk(row2(0, 0), {row2(1, 0), row2(0, 1), row2(-1, 0)}, 3);
  EXPECT_EQ(tied[0].index, 0u);
  EXPECT_EQ(tied[1].index, 1u);
  EXPECT_EQ(tied[2].index, 2u);
}

TEST(Retrieve, KLargerThanCandidatesThrows) {
  EXPECT_THROW(matcher::retrieve_topk(row2(0, 0), {row2(1, 0)}, 2), InvalidArgument);
}

TEST(Retrieve, ImageSelfQueryRanksFirst) {
  model::ColaModel<double> m(tiny_config());
  Rng rng(52);
  std::vector<Image> imgs;
  for (int i = 0; i < 6; ++i) imgs.push_back(random_image(rng, 16));
  const auto top = matcher::retrieve_topk(imgs[3], imgs, m, m.eps_mean(), 2);
  EXPECT_EQ(top[0].index, 3u);
}

TEST(Bank, CentroidsAreTemplateMeans) {
  model::ColaModel<double> m(tiny_config());
  Rng rng(60);
  std::vector<std::vector<Image>> tpl(3);
  for (int c = 0; c < 3; ++c)
    for (int n = 0; n < 4; ++n) tpl[c].push_back(random_image(rng, 16));
  const auto bank = matcher::encode_templates(tpl, {4, 9, 2}, m, m.eps_mean());
  ASSERT_EQ(bank.size(), 3u);
  for (int c = 0; c < 3; ++c) {
    Mat<double> sum = Mat<double>::Zero(m.config().K, m.config().D_slot);
    for (const auto& img : tpl[c]) sum += m.encode(img, m.eps_mean()).mean;
    EXPECT_LT((bank.centroids[c] - sum / 4.0).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_EQ(bank.index_of(2), 2u);
  EXPECT_THROW(bank.index_of(5), InvalidArgument);
}

TEST(Bank, SingleTemplateCentroidIsItsLatent) {
  model::ColaModel<double> m(tiny_config());
  Rng rng(61);
  std::vector<std::vector<Image>> tpl = {{random_image(rng, 16)}, {random_image(rng, 16)}};
  const auto bank = matcher::encode_templates(tpl, {0, 1}, m, m.eps_mean());
  EXPECT_EQ(bank.centroids[0], bank.latents[0][0].sample);
  EXPECT_EQ(matcher::predict(tpl[1][0], bank, m), 1);
}

TEST(Bank, ClassWithoutTemplatesIsInvalid) {
  model::ColaModel<double> m(tiny_config());
  Rng rng(62);
  std::vector<std::vector<Image>> tpl = {{random_image(rng, 16)}, {}};
  EXPECT_THROW(matcher::encode_templates(tpl, {0, 1}, m, m.eps_mean()), InvalidArgument);
  const matcher::TemplateBank<double> empty;
  EXPECT_THROW(matcher::predict(tpl[0][0], empty, m), InvalidArgument);
}

TEST(Bank, ExportImportRoundTrip) {
  model::ColaModel<double> m(tiny_config());
  Rng rng(63);
  std::vector<std::vector<Image>> tpl(2);
  for (auto& t : tpl)
    for (int n = 0; n < 2; ++n) t.push_back(random_image(rng, 16));
  Rng sample_rng(5);
  const auto bank = matcher::encode_templates(tpl, {3, 8}, m, m.eps_mean(), &sample_rng);
  const auto path = std::filesystem::temp_directory_path() / "cola_bank_roundtrip.cola";
  matcher::export_bank(bank, "abc123").write(path);
  const auto archive = Archive::read(path);
  std::filesystem::remove(path);
  EXPECT_EQ(archive.meta.at("checkpoint_hash"), "abc123");
  const auto back = matcher::import_bank<double>(archive);
  EXPECT_EQ(back.class_ids, bank.class_ids);
  EXPECT_TRUE(back.sampled);
  EXPECT_EQ(back.eps_used, bank.eps_used);
  for (int c = 0; c < 2; ++c) {
    EXPECT_EQ(back.centroids[c], bank.centroids[c]);
    for (int n = 0; n < 2; ++n) EXPECT_EQ(back.latents[c][n].sample, bank.latents[c][n].sample);
  }
}
