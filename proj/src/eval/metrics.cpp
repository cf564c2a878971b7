#include "hdr/eval/metrics.h"

#include <cmath>

#include "hdr/error.h"
#include "hdr/tensor.h"

namespace hdr::eval {

Image composite_repair(const Image& x_r, const Image& x_target, const Mask& x_m) {
    if (!x_r.same_shape(x_target) || x_m.height() != x_r.height() || x_m.width() != x_r.width())
        throw ShapeError("composite_repair: shape mismatch");
    Image out = x_target;
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            if (x_m.at(y, x))
                for (int c = 0; c < out.channels(); ++c) out.at(y, x, c) = x_r.at(y, x, c);
    return out;
}

RecAccCount rec_acc_counts(const std::vector<Image>& repaired, const std::vector<degrade::DamagedPair>& pairs,
                           CharClassifier& clf) {
    if (repaired.size() != pairs.size()) throw ShapeError("rec_acc: one repaired image per pair");
    std::vector<std::pair<const Image*, Box>> items;
    std::vector<const std::string*> labels;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        for (const auto& ch : pairs[i].damaged_chars) {
            items.push_back({&repaired[i], ch.bbox});
            labels.push_back(&ch.label);
        }
    RecAccCount out;
    const auto predicted = clf.classify(items);
    for (std::size_t i = 0; i < predicted.size(); ++i) out.correct += predicted[i] == *labels[i];
    out.total = static_cast<long>(predicted.size());
    return out;
}

std::optional<double> rec_acc(const std::vector<Image>& repaired, const std::vector<degrade::DamagedPair>& pairs,
                              CharClassifier& clf) {
    return rec_acc_counts(repaired, pairs, clf).fraction();
}

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2, double eps) {
    const auto d = mu1.size();
    if (mu2.size() != d || s1.rows() != d || s1.cols() != d || s2.rows() != d || s2.cols() != d)
        throw ShapeError("frechet_distance: dimension mismatch");
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd a = s1 + eps * I, b = s2 + eps * I;

    // Tr (A B)^{1/2} = Tr (A^{1/2} B A^{1/2})^{1/2}; the inner matrix is symmetric PSD.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a);
    const Eigen::MatrixXd ra =
        ea.eigenvectors() * ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
    Eigen::MatrixXd m = ra * b * ra;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
    const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    return (mu1 - mu2).squaredNorm() + a.trace() + b.trace() - 2.0 * tr_sqrt;
}

namespace {

void moments(const Eigen::MatrixXd& f, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    if (f.rows() == 0) throw PreconditionError("distribution metrics need non-empty sets");
    mu = f.colwise().mean().transpose();
    const Eigen::MatrixXd c = f.rowwise() - mu.transpose();
    cov = f.rows() > 1 ? Eigen::MatrixXd((c.transpose() * c) / static_cast<double>(f.rows() - 1))
                       : Eigen::MatrixXd::Zero(f.cols(), f.cols());
}

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
    auto c = t.to(torch::kFloat64).contiguous();
    Eigen::MatrixXd m(c.size(0), c.size(1));
    auto acc = c.accessor<double, 2>();
    for (long i = 0; i < c.size(0); ++i)
        for (long j = 0; j < c.size(1); ++j) m(i, j) = acc[i][j];
    return m;
}

}  // namespace

double fid_from_features(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double eps) {
    Eigen::VectorXd mu1, mu2;
    Eigen::MatrixXd s1, s2;
    moments(a, mu1, s1);
    moments(b, mu2, s2);
    return frechet_distance(mu1, s1, mu2, s2, eps);
}

DistributionMetrics distribution_metrics(const std::vector<Image>& repaired, const std::vector<Image>& targets,
                                         diffusion::PerceptualBackbone& backbone, bool proxy) {
    if (repaired.empty() || targets.empty()) throw PreconditionError("distribution metrics need non-empty sets");
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> pooled_r, pooled_t;
    double lpips_sum = 0.0;
    long lpips_n = 0;
    const bool aligned = repaired.size() == targets.size();
    const std::size_t chunk = 64;
    for (std::size_t s = 0; s < std::max(repaired.size(), targets.size()); s += chunk) {
        std::vector<torch::Tensor> fr, ft;
        if (s < repaired.size()) {
            std::vector<Image> part(repaired.begin() + s, repaired.begin() + std::min(repaired.size(), s + chunk));
            fr = backbone.features(to_batch(part, Range::Unit));
            pooled_r.push_back(fr.back().mean({2, 3}));
        }
        if (s < targets.size()) {
            std::vector<Image> part(targets.begin() + s, targets.begin() + std::min(targets.size(), s + chunk));
            ft = backbone.features(to_batch(part, Range::Unit));
            pooled_t.push_back(ft.back().mean({2, 3}));
        }
        if (aligned && !fr.empty()) {
            torch::Tensor per = torch::zeros({fr.front().size(0)});
            for (std::size_t k = 0; k < fr.size(); ++k) {
                auto nr = fr[k] / (fr[k].pow(2).sum(1, true).sqrt() + 1e-10);
                auto nt = ft[k] / (ft[k].pow(2).sum(1, true).sqrt() + 1e-10);
                per += (nr - nt).pow(2).sum(1).mean({1, 2});
            }
            lpips_sum += (per / static_cast<double>(fr.size())).sum().item<double>();
            lpips_n += per.size(0);
        }
    }
    DistributionMetrics out;
    out.proxy = proxy;
    out.fid = fid_from_features(to_eigen(torch::cat(pooled_r)), to_eigen(torch::cat(pooled_t)));
    if (aligned) out.lpips = lpips_sum / lpips_n;
    return out;
}

}  // namespace hdr::eval
