#include "torch_doctest.h"

#include <cmath>
#include <set>

#include "hdr/corpus/corpus.h"
#include "hdr/degrade/degrade.h"
#include "hdr/error.h"
#include "hdr/eval/classifier.h"
#include "hdr/eval/evaluate.h"
#include "hdr/eval/metrics.h"
#include "hdr/tensor.h"

using namespace hdr;
using namespace hdr::eval;

namespace {

Image ramp(int h, int w, float offset) {
    Image img(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = offset + 0.01f * (x + 2 * y + c);
    return img;
}

corpus::ToyCorpusConfig small_corpus(int pages) {
    corpus::ToyCorpusConfig c;
    c.pages = pages;
    c.seed = 21;
    return c;
}

// One trained classifier shared by the tests that need it.
CharClassifier& shared_classifier() {
    static CharClassifier clf = [] {
        auto patches = corpus::generate_toy_corpus(small_corpus(120));
        return train_char_classifier(patches, corpus::Alphabet(20), ClassifierConfig{});
    }();
    return clf;
}

}  // namespace

TEST_CASE("composite: full, empty and half-plane masks") {
    const Image r = ramp(6, 8, 0.1f), t = ramp(6, 8, 0.5f);
    Mask ones(6, 8), zeros(6, 8), left(6, 8);
    ones.fill_box({0, 0, 8, 6});
    left.fill_box({0, 0, 4, 6});
    CHECK(composite_repair(r, t, ones) == r);
    CHECK(composite_repair(r, t, zeros) == t);
    auto half = composite_repair(r, t, left);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c) CHECK(half.at(y, x, c) == (x < 4 ? r.at(y, x, c) : t.at(y, x, c)));
    // Compositing twice changes nothing.
    CHECK(composite_repair(half, t, left) == half);
    CHECK_THROWS_AS(composite_repair(r, ramp(6, 7, 0.0f), ones), ShapeError);
    CHECK_THROWS_AS(composite_repair(r, t, Mask(5, 8)), ShapeError);
}

TEST_CASE("Frechet distance: closed forms") {
    SUBCASE("identical Gaussians") {
        Eigen::VectorXd mu(3);
        mu << 0.5, -1.0, 2.0;
        Eigen::MatrixXd s(3, 3);
        s << 2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5;
        CHECK(std::abs(frechet_distance(mu, s, mu, s)) <= 1e-6);
    }
    SUBCASE("diagonal covariances") {
        // Commuting covariances: Tr(S1 + S2 - 2 sqrt(S1 S2)) = sum (sqrt(a_i + eps) - sqrt(b_i + eps))^2.
        Eigen::VectorXd mu1(3), mu2(3), a(3), b(3);
        mu1 << 0.0, 1.0, 2.0;
        mu2 << 1.0, 1.0, -1.0;
        a << 1.0, 4.0, 0.25;
        b << 9.0, 1.0, 0.04;
        const double eps = 1e-6;
        double expected = (mu1 - mu2).squaredNorm();
        for (int i = 0; i < 3; ++i) expected += std::pow(std::sqrt(a[i] + eps) - std::sqrt(b[i] + eps), 2);
        CHECK(frechet_distance(mu1, a.asDiagonal().toDenseMatrix(), mu2, b.asDiagonal().toDenseMatrix(), eps) ==
              doctest::Approx(expected).epsilon(1e-10));
    }
    SUBCASE("non-commuting 2x2 covariances") {
        // For a 2x2 matrix with positive eigenvalues, Tr sqrt(M) = sqrt(Tr M + 2 sqrt(det M)).
        Eigen::MatrixXd s1(2, 2), s2(2, 2);
        s1 << 2.0, 0.8, 0.8, 1.0;
        s2 << 0.5, -0.3, -0.3, 1.5;
        Eigen::VectorXd mu1(2), mu2(2);
        mu1 << 0.3, -0.2;
        mu2 << -0.1, 0.4;
        const double eps = 1e-6;
        const Eigen::MatrixXd a = s1 + eps * Eigen::MatrixXd::Identity(2, 2);
        const Eigen::MatrixXd b = s2 + eps * Eigen::MatrixXd::Identity(2, 2);
        const Eigen::MatrixXd m = a * b;
        const double tr_sqrt = std::sqrt(m.trace() + 2.0 * std::sqrt(m.determinant()));
        const double expected = (mu1 - mu2).squaredNorm() + a.trace() + b.trace() - 2.0 * tr_sqrt;
        CHECK(std::abs(frechet_distance(mu1, s1, mu2, s2, eps) - expected) < 1e-8);
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(frechet_distance(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2),
                                         Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)),
                        ShapeError);
    }
}

TEST_CASE("FID from features: identical and shifted sets") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(200, 6);
    CHECK(std::abs(fid_from_features(x, x)) <= 1e-6);
    // A shift leaves the covariance alone, so the distance is the squared shift.
    Eigen::RowVectorXd shift(6);
    shift << 1.0, -2.0, 0.5, 0.0, 0.25, 3.0;
    Eigen::MatrixXd y = x.rowwise() + shift;
    CHECK(fid_from_features(x, y) == doctest::Approx(shift.squaredNorm()).epsilon(1e-6));
    CHECK_THROWS(fid_from_features(Eigen::MatrixXd(0, 6), x));
}

TEST_CASE("Rec-ACC counts and the no-sample marker") {
    RecAccCount none;
    CHECK_FALSE(none.fraction().has_value());
    RecAccCount a{3, 4}, b{1, 4};
    a += b;
    CHECK(a.correct == 4);
    CHECK(a.total == 8);
    CHECK(*a.fraction() == 0.5);

    degrade::DamagedPair empty;
    empty.damaged = ramp(8, 8, 0.0f);
    empty.target = empty.damaged;
    CHECK_FALSE(rec_acc({empty.damaged}, {empty}, shared_classifier()).has_value());
}

TEST_CASE("classifier argmax breaks ties toward the lowest index") {
    const float row[] = {0.1f, 0.7f, 0.7f, -1.0f, 0.7f};
    CHECK(CharClassifier::argmax(row, 5) == 1);
    const float flat[] = {2.0f, 2.0f, 2.0f};
    CHECK(CharClassifier::argmax(flat, 3) == 0);
}

TEST_CASE("held-out split is disjoint and exhaustive") {
    auto split = split_patches(95, 10);
    std::set<std::size_t> train(split.train.begin(), split.train.end());
    std::set<std::size_t> held(split.heldout.begin(), split.heldout.end());
    CHECK(train.size() + held.size() == 95);
    for (auto i : held) {
        CHECK(i % 10 == 9);
        CHECK(train.count(i) == 0);
    }
    CHECK(held.size() == 9);
}

TEST_CASE("crop preparation pads to a square with the border colour") {
    Image page(40, 40, 3, 0.8f);
    for (int y = 10; y < 30; ++y)
        for (int x = 15; x < 25; ++x) page.at(y, x, 0) = page.at(y, x, 1) = page.at(y, x, 2) = 0.0f;
    // A tall 14 x 20 box whose border is mostly paper: padding columns take the paper colour.
    auto crop = prepare_crop(page, {13, 10, 27, 30}, 32);
    CHECK(crop.height() == 32);
    CHECK(crop.width() == 32);
    CHECK(crop.at(16, 0, 0) == doctest::Approx(0.8f));
    CHECK(crop.at(16, 16, 0) == doctest::Approx(0.0f));
}

TEST_CASE("classifier training: accuracy, determinism and errors") {
    auto& clf = shared_classifier();
    MESSAGE("held-out accuracy " << clf.heldout_accuracy);
    CHECK(clf.heldout_accuracy >= 0.95);

    // A short, seed-fixed run repeated gives the same held-out accuracy and logits.
    auto patches = corpus::generate_toy_corpus(small_corpus(20));
    ClassifierConfig quick;
    quick.epochs = 1;
    auto a = train_char_classifier(patches, corpus::Alphabet(20), quick);
    auto b = train_char_classifier(patches, corpus::Alphabet(20), quick);
    CHECK(a.heldout_accuracy == b.heldout_accuracy);
    auto probe = torch::rand({4, 3, 32, 32}, torch::TensorOptions().dtype(torch::kFloat32));
    CHECK(torch::equal(a.logits(probe), b.logits(probe)));

    // Keep only glyph 0: a single class cannot train a classifier.
    for (auto& p : patches) {
        std::vector<corpus::CharAnnotation> keep;
        for (auto& ann : p.annotations)
            if (ann.label == corpus::Alphabet(20).label(0)) keep.push_back(ann);
        p.annotations = keep;
    }
    CHECK_THROWS_AS(train_char_classifier(patches, corpus::Alphabet(20), quick), PreconditionError);
}

TEST_CASE("classifier save and load round trip") {
    auto& clf = shared_classifier();
    const auto path = std::filesystem::temp_directory_path() / "hdr_test_clf.ckpt";
    clf.save(path);
    auto back = CharClassifier::load(path);
    auto probe = torch::rand({3, 3, 32, 32});
    CHECK(torch::equal(clf.logits(probe), back.logits(probe)));
    CHECK(back.labels() == clf.labels());
    CHECK(back.heldout_accuracy == clf.heldout_accuracy);
    std::filesystem::remove(path);
}

TEST_CASE("Rec-ACC: targets versus erased characters") {
    auto& clf = shared_classifier();
    const corpus::Alphabet alphabet(20);
    auto patches = corpus::generate_toy_corpus([] {
        auto c = small_corpus(30);
        c.seed = 99;  // pages the classifier has not seen
        return c;
    }());
    const degrade::MixRatios missing_only{1.0, 0.0, 0.0};
    auto pairs = degrade::build_dataset(patches, missing_only, 5);

    std::vector<Image> targets, damaged;
    for (const auto& p : pairs) {
        targets.push_back(p.target);
        damaged.push_back(p.damaged);
    }
    // On targets, Rec-ACC equals the classifier's own per-crop accuracy.
    long correct = 0, total = 0;
    for (const auto& p : pairs)
        for (const auto& ann : p.damaged_chars) {
            correct += clf.classify(p.target, ann.bbox) == ann.label;
            ++total;
        }
    REQUIRE(total > 0);
    auto on_targets = rec_acc(targets, pairs, clf);
    REQUIRE(on_targets.has_value());
    CHECK(*on_targets == doctest::Approx(static_cast<double>(correct) / total));
    CHECK(*on_targets >= 0.95);

    // Characters the mask covers completely are blank paper in the damaged image; the classifier can do no
    // better than guessing there.
    std::vector<Image> erased_images;
    std::vector<degrade::DamagedPair> erased_pairs;
    for (const auto& p : pairs) {
        degrade::DamagedPair q = p;
        q.damaged_chars.clear();
        for (const auto& ann : p.damaged_chars) {
            bool covered = true;
            for (int y = ann.bbox.y0; y < ann.bbox.y1 && covered; ++y)
                for (int x = ann.bbox.x0; x < ann.bbox.x1 && covered; ++x) covered = p.mask.mask.at(y, x);
            if (covered) q.damaged_chars.push_back(ann);
        }
        erased_images.push_back(p.damaged);
        erased_pairs.push_back(std::move(q));
    }
    auto counts = rec_acc_counts(erased_images, erased_pairs, clf);
    MESSAGE("Rec-ACC on fully erased characters " << counts.fraction().value_or(-1.0) << " over " << counts.total);
    REQUIRE(counts.total >= 50);
    CHECK(*counts.fraction() < 3.0 / alphabet.size());
}

TEST_CASE("distribution metrics: identical sets and empty input") {
    auto& clf = shared_classifier();
    auto backbone = make_backbone(clf, 1.0);
    std::vector<Image> set;
    for (int i = 0; i < 6; ++i) set.push_back(ramp(64, 64, 0.05f * i));
    auto same = distribution_metrics(set, set, *backbone, true);
    CHECK(std::abs(same.fid) <= 1e-6);
    REQUIRE(same.lpips.has_value());
    CHECK(*same.lpips == 0.0);
    CHECK(same.proxy);
    std::vector<Image> other;
    for (int i = 0; i < 6; ++i) other.push_back(ramp(64, 64, 0.3f + 0.05f * i));
    auto diff = distribution_metrics(set, other, *backbone, true);
    CHECK(diff.fid > 0.0);
    CHECK(diff.lpips.value_or(0.0) > 0.0);
    CHECK_THROWS(distribution_metrics({}, {}, *backbone, true));
    // Unaligned sets still get FID but no pairwise distance.
    auto unaligned = distribution_metrics(set, std::vector<Image>(other.begin(), other.end() - 1), *backbone, true);
    CHECK(unaligned.fid > 0.0);
    CHECK_FALSE(unaligned.lpips.has_value());
}

TEST_CASE("evaluate_run: identity model scores like the damaged images") {
    auto& clf = shared_classifier();
    const corpus::Alphabet alphabet(20);
    auto patches = corpus::generate_toy_corpus([] {
        auto c = small_corpus(6);
        c.seed = 7;
        return c;
    }());
    auto pairs = degrade::build_dataset(patches, {}, 3);
    // 8-bit inputs survive the sampler's round trip exactly, like the quantized repairs.
    for (auto& p : pairs) {
        p.damaged.quantize8();
        p.target.quantize8();
    }
    auto sch = diffusion::make_schedule(20);
    // Predicts the damaged image itself, so repairs reproduce x_d.
    sampler::ModelFn echo = [](const torch::Tensor& x, const torch::Tensor&) { return x.slice(1, 3, 6).clone(); };
    EvalOptions opts;
    opts.scales = {1.0, 1.0};  // guidance reduces to the full-condition term, which echoes x_d
    opts.sampler.steps = 3;
    opts.batch_size = 5;
    auto run = evaluate_run(echo, sch, pairs, alphabet, clf, opts);
    REQUIRE(run.repaired.size() == pairs.size());
    CHECK(run.report.n == static_cast<long>(pairs.size()));
    for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(run.composites[i] == pairs[i].damaged);
    REQUIRE(run.report.rec_acc.has_value());
    CHECK(*run.report.rec_acc == doctest::Approx(*run.report.damaged_rec_acc).epsilon(1e-12));
    long chars = 0, pairs_total = 0;
    for (const auto& [kind, stats] : run.report.per_kind) {
        chars += stats.chars.total;
        pairs_total += stats.pairs;
    }
    CHECK(chars == run.report.characters);
    CHECK(pairs_total == run.report.n);
    CHECK(run.report.fid.has_value());
    CHECK(run.report.proxy_metrics);

    auto json = run.report.to_json();
    CHECK(json.contains("rec_acc"));
    CHECK(json.contains("per_kind"));
    CHECK(json.at("config_digest").get<std::string>().size() == 64);

    // Batch size does not change results.
    opts.batch_size = 2;
    auto again = evaluate_run(echo, sch, pairs, alphabet, clf, opts);
    for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(again.repaired[i] == run.repaired[i]);
    CHECK(again.report.to_json() == json);
}
