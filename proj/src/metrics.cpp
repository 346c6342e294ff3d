#include "shmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "shmt/error.hpp"

namespace shmt::metrics {

namespace {

// Eigenvalues within this fraction of the largest are treated as rounding
// noise when negative; anything below is a genuine failure.
constexpr double kNegativeTolerance = 1e-9;
constexpr double kKeyEps = 1e-8;

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size(), "cosine of vectors with lengths " + std::to_string(a.size()) +
                                    " and " + std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) fail(ErrorKind::kNumeric, "cosine similarity of a zero vector");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

Moments moments(const Eigen::MatrixXd& x) {
  Moments m;
  m.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centred = x.rowwise() - m.mean.transpose();
  m.cov = centred.transpose() * centred / static_cast<double>(x.rows() - 1);
  m.cov.diagonal().array() += kCovarianceShrinkage;
  return m;
}

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

FidResult fid_detailed(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.rows() >= 2 && b.rows() >= 2, "fid needs at least two samples per set");
  require(a.cols() == b.cols() && a.cols() > 0,
          "fid feature widths differ: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  require(a.allFinite() && b.allFinite(), "fid features contain non-finite values");

  const Moments ma = moments(a);
  const Moments mb = moments(b);
  const Eigen::MatrixXd root_a = symmetric_sqrt(ma.cov);
  Eigen::MatrixXd product = root_a * mb.cov * root_a;
  product = 0.5 * (product + product.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(product, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  FidResult r;
  r.min_eigenvalue = lambda.minCoeff();
  r.max_eigenvalue = lambda.maxCoeff();
  const double floor = -kNegativeTolerance * std::max(1.0, std::abs(r.max_eigenvalue));
  if (r.min_eigenvalue < floor) {
    std::ostringstream msg;
    msg << "covariance product is not positive semi-definite after shrinkage: eigenvalues in ["
        << r.min_eigenvalue << ", " << r.max_eigenvalue << "], dim " << a.cols() << ", samples "
        << a.rows() << "/" << b.rows();
    fail(ErrorKind::kNumeric, msg.str());
  }
  double trace_root = 0.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda[i] < 0.0) {
      ++r.clipped;
      continue;
    }
    trace_root += std::sqrt(lambda[i]);
  }
  const double mean_term = (ma.mean - mb.mean).squaredNorm();
  const double value = mean_term + ma.cov.trace() + mb.cov.trace() - 2.0 * trace_root;
  // rounding can push identical sets a hair below zero
  r.value = std::max(0.0, value);
  return r;
}

double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return fid_detailed(a, b).value; }

Eigen::MatrixXd cls_matrix(const std::vector<Features>& features) {
  require(!features.empty(), "empty feature set");
  const auto dim = static_cast<Eigen::Index>(features.front().cls.size());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(features.size()), dim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    require(static_cast<Eigen::Index>(features[i].cls.size()) == dim, "mixed feature widths");
    for (Eigen::Index d = 0; d < dim; ++d) m(static_cast<Eigen::Index>(i), d) = features[i].cls[d];
  }
  return m;
}

double cosine(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }
double cosine(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }

double cls_similarity(const Features& result, const Features& reference) {
  return cosine(std::span<const float>(result.cls), std::span<const float>(reference.cls));
}

double cls_similarity(const Image& result, const Image& reference, const FeatureExtractor& extractor) {
  return cls_similarity(extractor.extract(result), extractor.extract(reference));
}

std::vector<double> self_similarity(const Features& f) {
  require(f.patches > 0 && f.key_dim > 0, "extractor produced no patch keys");
  std::vector<double> norms(f.patches);
  for (int p = 0; p < f.patches; ++p) {
    double s = 0.0;
    for (float v : f.key(p)) s += static_cast<double>(v) * v;
    norms[p] = std::sqrt(s) + kKeyEps;
  }
  std::vector<double> s(static_cast<std::size_t>(f.patches) * f.patches);
  for (int i = 0; i < f.patches; ++i) {
    const auto ki = f.key(i);
    for (int j = i; j < f.patches; ++j) {
      const auto kj = f.key(j);
      double dot = 0.0;
      for (int d = 0; d < f.key_dim; ++d) dot += static_cast<double>(ki[d]) * kj[d];
      const double c = dot / (norms[i] * norms[j]);
      s[static_cast<std::size_t>(i) * f.patches + j] = c;
      s[static_cast<std::size_t>(j) * f.patches + i] = c;
    }
  }
  return s;
}

double key_sim(const Features& result, const Features& source) {
  if (result.patches != source.patches)
    fail(ErrorKind::kValidation, "key_sim patch count mismatch: " + std::to_string(result.patches) +
                                     " vs " + std::to_string(source.patches));
  const std::vector<double> a = self_similarity(result);
  const std::vector<double> b = self_similarity(source);
  return cosine(std::span<const double>(a), std::span<const double>(b));
}

double key_sim(const Image& result, const Image& source, const FeatureExtractor& extractor) {
  return key_sim(extractor.extract(result), extractor.extract(source));
}

EvalReport evaluate(const std::vector<EvalPair>& pairs, const FeatureExtractor& extractor,
                    nlohmann::json config) {
  require(!pairs.empty(), "evaluate needs at least one pair");
  const int n = static_cast<int>(pairs.size());
  // slot 3i = source, 3i+1 = reference, 3i+2 = result
  std::vector<Features> feats(static_cast<std::size_t>(n) * 3);
  std::vector<std::string> errors(feats.size());

#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < 3 * n; ++k) {
    const EvalPair& p = pairs[k / 3];
    const Image& img = k % 3 == 0 ? p.source : (k % 3 == 1 ? p.reference : p.result);
    try {
      feats[k] = extractor.extract(img);
    } catch (const std::exception& e) {
      errors[k] = p.name + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) fail(ErrorKind::kValidation, e);

  EvalReport report;
  report.extractor = extractor.id();
  report.dim = extractor.dim();
  report.config = std::move(config);
  std::vector<Features> refs, results;
  for (int i = 0; i < n; ++i) {
    PairScore s;
    s.name = pairs[i].name;
    s.cls = cls_similarity(feats[3 * i + 2], feats[3 * i + 1]);
    s.key_sim = key_sim(feats[3 * i + 2], feats[3 * i]);
    report.mean_cls += s.cls / n;
    report.mean_key_sim += s.key_sim / n;
    report.pairs.push_back(std::move(s));
    refs.push_back(std::move(feats[3 * i + 1]));
    results.push_back(std::move(feats[3 * i + 2]));
  }
  if (n >= 2) report.fid = fid_detailed(cls_matrix(refs), cls_matrix(results));
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : report.pairs)
    pairs.push_back({{"name", p.name}, {"cls", p.cls}, {"key_sim", p.key_sim}});
  nlohmann::json j = {
      {"extractor", report.extractor},
      {"dim", report.dim},
      {"pairs", pairs},
      {"mean_cls", report.mean_cls},
      {"mean_key_sim", report.mean_key_sim},
      {"config", report.config},
  };
  if (report.fid) {
    j["fid"] = report.fid->value;
    j["fid_clipped_eigenvalues"] = report.fid->clipped;
  } else {
    j["fid"] = nullptr;
    j["fid_clipped_eigenvalues"] = 0;
  }
  return j;
}

}  // namespace shmt::metrics
