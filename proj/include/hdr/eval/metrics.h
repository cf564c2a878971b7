#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "hdr/degrade/degrade.h"
#include "hdr/diffusion/losses.h"
#include "hdr/eval/classifier.h"
#include "hdr/image.h"

namespace hdr::eval {

// x_r inside the mask, x_target elsewhere.
Image composite_repair(const Image& x_r, const Image& x_target, const Mask& x_m);

struct RecAccCount {
    long correct = 0;
    long total = 0;

    // nullopt when there was nothing to classify.
    std::optional<double> fraction() const {
        if (total == 0) return std::nullopt;
        return static_cast<double>(correct) / total;
    }
    RecAccCount& operator+=(const RecAccCount& o) {
        correct += o.correct;
        total += o.total;
        return *this;
    }
};

// Classifies every damaged character of pairs[i] inside repaired[i]. Images must already be composited.
RecAccCount rec_acc_counts(const std::vector<Image>& repaired, const std::vector<degrade::DamagedPair>& pairs,
                           CharClassifier& clf);
std::optional<double> rec_acc(const std::vector<Image>& repaired, const std::vector<degrade::DamagedPair>& pairs,
                              CharClassifier& clf);

inline constexpr double kCovarianceEpsilon = 1e-6;

// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}) with eps * I added to both covariances.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2, double eps = kCovarianceEpsilon);

// Rows are samples. Covariance uses the unbiased (n - 1) normalisation; a single sample gives zero covariance.
double fid_from_features(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double eps = kCovarianceEpsilon);

struct DistributionMetrics {
    double fid = 0.0;
    std::optional<double> lpips;  // only for aligned sets of equal size
    bool proxy = true;  // computed on the character classifier trunk rather than Inception / LPIPS networks
};

// FID over globally pooled last-stage features and LPIPS-style distance (channel-normalised features,
// squared difference, spatial mean, averaged over stages) when the sets are aligned pairs.
DistributionMetrics distribution_metrics(const std::vector<Image>& repaired, const std::vector<Image>& targets,
                                         diffusion::PerceptualBackbone& backbone, bool proxy);

}  // namespace hdr::eval
