#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "shmt/feature_extractor.hpp"
#include "shmt/image.hpp"

namespace shmt::metrics {

// Added to both covariances before the square root.
inline constexpr double kCovarianceShrinkage = 1e-6;

struct FidResult {
  double value = 0.0;
  // Eigenvalues of sqrt(S_a) S_b sqrt(S_a) that came out slightly negative
  // and were clipped to zero.
  int clipped = 0;
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
};

// Rows are samples. Both sets need at least two rows and the same width.
FidResult fid_detailed(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Stack the pooled vectors of a feature set into a sample matrix.
Eigen::MatrixXd cls_matrix(const std::vector<Features>& features);

// Cosine similarity; a zero vector is an error.
double cosine(std::span<const float> a, std::span<const float> b);
double cosine(std::span<const double> a, std::span<const double> b);

double cls_similarity(const Features& result, const Features& reference);
double cls_similarity(const Image& result, const Image& reference, const FeatureExtractor& extractor);

// patches x patches cosine matrix of the keys, row-major.
std::vector<double> self_similarity(const Features& features);
double key_sim(const Features& result, const Features& source);
double key_sim(const Image& result, const Image& source, const FeatureExtractor& extractor);

struct EvalPair {
  std::string name;
  Image source;
  Image reference;
  Image result;
};

struct PairScore {
  std::string name;
  double cls = 0.0;
  double key_sim = 0.0;
};

struct EvalReport {
  std::string extractor;
  int dim = 0;
  std::vector<PairScore> pairs;
  double mean_cls = 0.0;
  double mean_key_sim = 0.0;
  // Between the reference set and the result set; absent with fewer than
  // two pairs.
  std::optional<FidResult> fid;
  nlohmann::json config = nlohmann::json::object();
};

// Features are extracted in parallel per image, scores reduced serially.
EvalReport evaluate(const std::vector<EvalPair>& pairs, const FeatureExtractor& extractor,
                    nlohmann::json config = nlohmann::json::object());
nlohmann::json to_json(const EvalReport& report);

}  // namespace shmt::metrics
