#include <cmath>
#include <set>

#include "doctest.h"
#include "shmt/error.hpp"
#include "shmt/facesynth.hpp"
#include "shmt/metrics.hpp"
#include "test_helpers.hpp"

using namespace shmt;
using namespace shmt::metrics;

namespace {

Eigen::MatrixXd gaussian_set(int n, int d, double shift, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal() + shift;
  return m;
}

// Unbiased 2x2 covariance with the shrinkage the implementation applies.
Eigen::Matrix2d cov2(const Eigen::MatrixXd& x) {
  double mx = 0, my = 0;
  for (int i = 0; i < x.rows(); ++i) {
    mx += x(i, 0);
    my += x(i, 1);
  }
  mx /= x.rows();
  my /= x.rows();
  double sxx = 0, syy = 0, sxy = 0;
  for (int i = 0; i < x.rows(); ++i) {
    sxx += (x(i, 0) - mx) * (x(i, 0) - mx);
    syy += (x(i, 1) - my) * (x(i, 1) - my);
    sxy += (x(i, 0) - mx) * (x(i, 1) - my);
  }
  const double k = 1.0 / (x.rows() - 1);
  Eigen::Matrix2d c;
  c << sxx * k + kCovarianceShrinkage, sxy * k, sxy * k, syy * k + kCovarianceShrinkage;
  return c;
}

Image recolour(const Image& img) {
  // swap channels around and lift everything by the same amount
  Image out(3, img.height(), img.width());
  const int perm[3] = {2, 0, 1};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) out.at(c, y, x) = img.at(perm[c], y, x) + 0.125f;
  return out;
}

Image negate(const Image& img) {
  Image out = img;
  for (float& v : out.pixels()) v = -v;
  return out;
}

}  // namespace

TEST_CASE("fid of a set against itself is zero") {
  const Eigen::MatrixXd x = gaussian_set(300, 8, 0.0, 1);
  CHECK(std::abs(fid(x, x)) <= 1e-6);
  // fewer samples than dimensions: singular covariance, shrinkage keeps it sane
  const Eigen::MatrixXd few = gaussian_set(10, 64, 0.3, 2);
  CHECK(std::abs(fid(few, few)) <= 1e-6);
}

TEST_CASE("fid is symmetric") {
  const Eigen::MatrixXd a = gaussian_set(200, 6, 0.0, 3);
  Eigen::MatrixXd b = gaussian_set(150, 6, 0.5, 4);
  b.col(2) *= 3.0;
  b.col(0) += 0.7 * b.col(1);
  CHECK(std::abs(fid(a, b) - fid(b, a)) <= 1e-8);
  CHECK(fid(a, b) > 0.0);
}

TEST_CASE("fid of shifted unit gaussians matches the closed form") {
  const Eigen::MatrixXd a = gaussian_set(10000, 4, 0.0, 5);
  const Eigen::MatrixXd b = gaussian_set(10000, 4, 1.0, 6);
  const double v = fid(a, b);
  CHECK(std::abs(v - 4.0) <= 0.05 * 4.0);
}

TEST_CASE("fid one-dimensional hand example") {
  // a: mean 1 var 2, b: mean 3 var 8 -> 4 + 2 + 8 - 2*sqrt(16) = 6
  Eigen::MatrixXd a(2, 1), b(2, 1);
  a << 0, 2;
  b << 1, 5;
  CHECK(fid(a, b) == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("fid two-dimensional closed form with non-commuting covariances") {
  // For 2x2 PSD matrices tr sqrt(A B) = sqrt(tr(AB) + 2 sqrt(det A det B)).
  Eigen::MatrixXd a = gaussian_set(40, 2, 0.0, 7);
  Eigen::MatrixXd b = gaussian_set(40, 2, 0.0, 8);
  a.col(1) += 0.9 * a.col(0);
  b.col(0) = 2.0 * b.col(0) - 0.5 * b.col(1);
  b.array() += 0.4;
  const Eigen::Matrix2d ca = cov2(a), cb = cov2(b);
  REQUIRE((ca * cb - cb * ca).norm() > 1e-2);
  const double trace_root = std::sqrt((ca * cb).trace() + 2.0 * std::sqrt(ca.determinant() * cb.determinant()));
  const Eigen::Vector2d mean_a = a.colwise().mean(), mean_b = b.colwise().mean();
  const double expected = (mean_a - mean_b).squaredNorm() + ca.trace() + cb.trace() - 2.0 * trace_root;
  CHECK(fid(a, b) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("fid rejects bad inputs") {
  Eigen::MatrixXd one = gaussian_set(1, 3, 0.0, 9);
  Eigen::MatrixXd ok = gaussian_set(5, 3, 0.0, 10);
  Eigen::MatrixXd wide = gaussian_set(5, 4, 0.0, 11);
  CHECK_THROWS_AS(fid(one, ok), Error);
  CHECK_THROWS_AS(fid(ok, wide), Error);
  ok(0, 0) = std::nan("");
  CHECK_THROWS_AS(fid(ok, ok), Error);
}

TEST_CASE("fid stays non-negative over random sets") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto r = fid_detailed(gaussian_set(12, 16, 0.0, 100 + s), gaussian_set(9, 16, 0.01, 200 + s));
    CHECK(r.value >= 0.0);
    CHECK(std::isfinite(r.value));
  }
}

TEST_CASE("cosine hand oracle and zero vector") {
  const std::vector<float> a{1, 2, 3}, b{4, 5, 6}, z{0, 0, 0};
  CHECK(cosine(std::span<const float>(a), std::span<const float>(b)) ==
        doctest::Approx(32.0 / std::sqrt(14.0 * 77.0)).epsilon(1e-12));
  CHECK(cosine(std::span<const float>(a), std::span<const float>(b)) == doctest::Approx(0.9746318461970762));
  CHECK_THROWS_AS(cosine(std::span<const float>(a), std::span<const float>(z)), Error);
}

TEST_CASE("cls similarity") {
  const RandomConvExtractor conv;
  const Image a = testing::random_image(3, 64, 64, 21);
  const Image b = testing::random_image(3, 64, 64, 22);
  CHECK(cls_similarity(a, a, conv) == doctest::Approx(1.0).epsilon(1e-12));

  const LinearExtractor linear;
  CHECK(cls_similarity(a, negate(a), linear) == doctest::Approx(-1.0).epsilon(1e-12));

  // random pair against the cosine computed by hand from the pooled vectors
  const Features fa = conv.extract(a), fb = conv.extract(b);
  double dot = 0, na = 0, nb = 0;
  for (int i = 0; i < conv.dim(); ++i) {
    dot += double(fa.cls[i]) * fb.cls[i];
    na += double(fa.cls[i]) * fa.cls[i];
    nb += double(fb.cls[i]) * fb.cls[i];
  }
  const double s = cls_similarity(a, b, conv);
  CHECK(s == doctest::Approx(dot / std::sqrt(na * nb)).epsilon(1e-12));
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);

  // an all-zero image gives a zero linear descriptor
  CHECK_THROWS_AS(cls_similarity(Image(3, 64, 64, 0.0f), a, linear), Error);
}

TEST_CASE("key_sim identities") {
  const RandomConvExtractor conv;
  const Image a = facesynth::generate(31, facesynth::Complexity::kComplex).image;
  CHECK(key_sim(a, a, conv) == doctest::Approx(1.0).epsilon(1e-12));

  const GradientExtractor grad;
  const Image b = recolour(a);
  CHECK(key_sim(b, a, grad) == doctest::Approx(1.0).epsilon(1e-6));
  // whereas the colour-sensitive extractor notices
  CHECK(cls_similarity(b, a, conv) < 0.999);

  CHECK_THROWS_AS(key_sim(a, testing::random_image(3, 32, 32, 3), conv), Error);
}

TEST_CASE("key_sim of unrelated faces is below the identical score") {
  const RandomConvExtractor conv;
  int below = 0;
  for (int i = 0; i < 50; ++i) {
    const auto tier = i % 2 ? facesynth::Complexity::kComplex : facesynth::Complexity::kSimple;
    const Image a = facesynth::generate(1000 + i, tier).image;
    const Image b = facesynth::generate(5000 + i, tier).image;
    const double same = key_sim(a, a, conv);
    const double other = key_sim(b, a, conv);
    if (other < same) ++below;
  }
  CHECK(below == 50);
}

TEST_CASE("parallel extractor matches the serial reference") {
  const RandomConvExtractor conv;
  for (std::uint64_t s : {41u, 42u}) {
    const Image img = facesynth::generate(s, facesynth::Complexity::kComplex).image;
    const Features fast = conv.extract(img);
    const Features slow = reference::random_conv_features(conv, img);
    REQUIRE(fast.keys.size() == slow.keys.size());
    REQUIRE(fast.patches == 64);
    REQUIRE(fast.key_dim == 64);
    float worst = 0.0f;
    for (std::size_t i = 0; i < fast.keys.size(); ++i)
      worst = std::max(worst, std::abs(fast.keys[i] - slow.keys[i]));
    for (std::size_t i = 0; i < fast.cls.size(); ++i)
      worst = std::max(worst, std::abs(fast.cls[i] - slow.cls[i]));
    CHECK(worst <= 1e-5f);
  }
  // odd-sized input to exercise the right and bottom borders
  metrics::Activation act{3, 9, 7, {}};
  Rng rng(5);
  for (int i = 0; i < 3 * 9 * 7; ++i) act.values.push_back(static_cast<float>(rng.uniform(-1, 1)));
  const auto& layer = conv.layers().front();
  const auto fast = metrics::kernels::conv3x3_s2(act, layer, false);
  const auto slow = reference::conv3x3_s2(act, layer, false);
  REQUIRE(fast.values.size() == slow.values.size());
  for (std::size_t i = 0; i < fast.values.size(); ++i) CHECK(fast.values[i] == doctest::Approx(slow.values[i]).epsilon(1e-5));
}

TEST_CASE("extractors are deterministic with fixed widths") {
  const Image a = testing::random_image(3, 64, 64, 51);
  for (const auto& id : extractor_ids()) {
    const auto ex = make_extractor(id);
    CHECK(ex->id() == id);
    const Features f1 = ex->extract(a);
    const Features f2 = make_extractor(id)->extract(a);
    CHECK(f1.cls == f2.cls);
    CHECK(f1.keys == f2.keys);
    CHECK(static_cast<int>(f1.cls.size()) == ex->dim());
  }
  CHECK(make_extractor("random-conv")->dim() == 64);
  CHECK_THROWS_AS(make_extractor("dino"), Error);
  CHECK(RandomConvExtractor(99).extract(a).cls != RandomConvExtractor().extract(a).cls);
  CHECK_THROWS_AS(RandomConvExtractor().extract(testing::random_image(3, 60, 60, 1)), Error);
}

TEST_CASE("evaluate report") {
  std::vector<EvalPair> pairs;
  for (int i = 0; i < 6; ++i) {
    EvalPair p;
    p.name = "pair-" + std::to_string(i);
    p.source = facesynth::generate(300 + i, facesynth::Complexity::kSimple).image;
    p.reference = facesynth::generate(400 + i, facesynth::Complexity::kComplex).image;
    p.result = p.reference;
    pairs.push_back(std::move(p));
  }
  std::set<std::string> schema;
  for (const auto& id : extractor_ids()) {
    const auto ex = make_extractor(id);
    const EvalReport r = evaluate(pairs, *ex, {{"note", "self"}});
    REQUIRE(r.fid.has_value());
    CHECK(r.fid->value <= 1e-6);
    CHECK(r.mean_cls == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.pairs.size() == 6);
    for (const auto& p : r.pairs) {
      CHECK(std::isfinite(p.cls));
      CHECK(std::isfinite(p.key_sim));
    }
    const auto j = to_json(r);
    CHECK(j["extractor"] == id);
    std::string keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys += it.key() + ",";
    for (auto it = j["pairs"][0].begin(); it != j["pairs"][0].end(); ++it) keys += it.key() + ",";
    schema.insert(keys);
  }
  CHECK(schema.size() == 1);

  // swapping result and source changes the numbers, evaluate is repeatable
  for (auto& p : pairs) p.result = p.source;
  const RandomConvExtractor conv;
  const auto r1 = to_json(evaluate(pairs, conv));
  const auto r2 = to_json(evaluate(pairs, conv));
  CHECK(r1 == r2);
  CHECK(r1["fid"].get<double>() > 0.0);
  CHECK(r1["mean_key_sim"].get<double>() == doctest::Approx(1.0).epsilon(1e-9));

  pairs[2].result = testing::random_image(3, 48, 48, 1);
  CHECK_THROWS_AS(evaluate(pairs, conv), Error);
}
