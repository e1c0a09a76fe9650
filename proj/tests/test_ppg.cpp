#include <doctest.h>

#include <cmath>

#include "pdet/numcore.hpp"
#include "pdet/oracles.hpp"
#include "pdet/ppg.hpp"
#include "pdet/rng.hpp"

using namespace pdet;

namespace {

// Candidate with a chosen score vector and feature.
Detection candidate(std::vector<double> scores, std::vector<double> feature) {
    Detection d;
    d.scores = std::move(scores);
    d.feature = std::move(feature);
    d.box = Box{0.5, 0.5, 0.2, 0.2};
    return d;
}

PrototypeBank bank_with_class0() {
    PrototypeBank bank;
    bank.feature_dim = 4;
    Rng rng(1);
    update_prototypes(bank, {{0, {1, 0, 0, 0}}}, {0}, rng);
    freeze_classes(bank, {0});
    return bank;
}

}  // namespace

TEST_CASE("prototype mean maintenance") {
    PrototypeBank bank;
    bank.feature_dim = 2;
    Rng rng(2);

    update_prototypes(bank, {{3, {1, 0}}}, {3}, rng);
    CHECK(bank.classes[3].prototype == std::vector<double>{1, 0});

    update_prototypes(bank, {{3, {0, 1}}}, {3}, rng);
    CHECK(bank.classes[3].prototype == std::vector<double>{0.5, 0.5});
}

TEST_CASE("prototype equals the mean of 50 random features") {
    PrototypeBank bank;
    bank.feature_dim = 6;
    Rng rng(3);
    std::vector<std::pair<int, std::vector<double>>> feats;
    std::vector<double> sum(6, 0.0);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> f(6);
        for (double& v : f) v = rng.uniform(-2, 2);
        for (std::size_t d = 0; d < 6; ++d) sum[d] += f[d];
        feats.push_back({1, f});
    }
    update_prototypes(bank, feats, {1}, rng);
    for (std::size_t d = 0; d < 6; ++d)
        CHECK(std::abs(bank.classes[1].prototype[d] - sum[d] / 50.0) <= 1e-12);
}

TEST_CASE("prototype bank enforces freeze and task membership") {
    PrototypeBank bank;
    bank.feature_dim = 2;
    Rng rng(4);
    update_prototypes(bank, {{0, {1, 1}}}, {0}, rng);
    freeze_classes(bank, {0});
    CHECK_THROWS(update_prototypes(bank, {{0, {2, 2}}}, {0}, rng));
    CHECK_THROWS(update_prototypes(bank, {{5, {2, 2}}}, {0}, rng));
}

TEST_CASE("prototype reservoir respects the capacity cap") {
    PrototypeBank bank;
    bank.feature_dim = 2;
    bank.capacity = 8;
    Rng rng(5);
    std::vector<std::pair<int, std::vector<double>>> feats;
    for (int i = 0; i < 100; ++i)
        feats.push_back({0, {static_cast<double>(i), 1.0}});
    update_prototypes(bank, feats, {0}, rng);
    CHECK(bank.classes[0].features.size() == 8);
    CHECK(bank.classes[0].seen == 100);
    // Mean still matches the stored features.
    std::vector<double> mean(2, 0.0);
    for (const auto& f : bank.classes[0].features)
        for (std::size_t d = 0; d < 2; ++d) mean[d] += f[d];
    for (std::size_t d = 0; d < 2; ++d)
        CHECK(bank.classes[0].prototype[d] ==
              doctest::Approx(mean[d] / 8.0).epsilon(1e-12));
}

TEST_CASE("validate threshold ladder") {
    // Classes: 0,1 old is {0,1}? Here old = {0, 1}, current = {2}; 4 real
    // classes plus no-object.
    const PrototypeBank bank = bank_with_class0();
    const PpgThresholds th{0.5, 0.2, 0.5};
    const std::set<int> old_classes = {0, 1};
    const std::set<int> current = {2};

    SUBCASE("high confidence is accepted directly") {
        const auto r = validate({candidate({0.6, 0.1, 0.1, 0.1, 0.1}, {1, 0, 0, 0})},
                                bank, th, old_classes, current);
        REQUIRE(r.labels.size() == 1);
        CHECK(r.labels[0].source == PseudoSource::easy);
        CHECK(r.labels[0].cls == 0);
        CHECK(r.counts.easy == 1);
    }

    SUBCASE("mid confidence with high prototype similarity is a hard accept") {
        const auto r = validate({candidate({0.3, 0.1, 0.2, 0.2, 0.2}, {0.7, 0.2, 0, 0})},
                                bank, th, old_classes, current);
        REQUIRE(r.labels.size() == 1);
        CHECK(r.labels[0].source == PseudoSource::hard);
        CHECK(*cosine_similarity(std::vector<double>{0.7, 0.2, 0, 0},
                                 bank.classes.at(0).prototype) >= 0.5);
    }

    SUBCASE("mid confidence with low similarity is rejected") {
        // cos([0.4, sqrt(1-0.16), 0, 0], [1,0,0,0]) = 0.4 < 0.5
        const auto r = validate(
            {candidate({0.3, 0.1, 0.2, 0.2, 0.2}, {0.4, std::sqrt(0.84), 0, 0})},
            bank, th, old_classes, current);
        CHECK(r.labels.empty());
        CHECK(r.counts.rejected == 1);
    }

    SUBCASE("low confidence is rejected regardless of similarity") {
        const auto r = validate({candidate({0.1, 0.08, 0.05, 0.07, 0.7}, {1, 0, 0, 0})},
                                bank, th, old_classes, current);
        CHECK(r.labels.empty());
        CHECK(r.counts.rejected == 1);
    }

    SUBCASE("confidence exactly at tau_high is rejected (strict bands)") {
        const auto r = validate({candidate({0.5, 0.1, 0.1, 0.1, 0.2}, {1, 0, 0, 0})},
                                bank, th, old_classes, current);
        CHECK(r.labels.empty());
        CHECK(r.counts.rejected == 1);
    }

    SUBCASE("current-task argmax is excluded from the universe") {
        const auto r = validate({candidate({0.1, 0.1, 0.6, 0.1, 0.1}, {1, 0, 0, 0})},
                                bank, th, old_classes, current);
        CHECK(r.labels.empty());
        CHECK(r.counts.excluded_current == 1);
        CHECK(r.counts.easy + r.counts.hard + r.counts.rejected == 0);
    }

    SUBCASE("missing prototype rejects with a diagnostic") {
        // Argmax old class is 1, which has no prototype.
        const auto r = validate({candidate({0.05, 0.3, 0.1, 0.05, 0.5}, {1, 0, 0, 0})},
                                bank, th, old_classes, current);
        CHECK(r.labels.empty());
        CHECK(r.counts.rejected == 1);
        CHECK(r.counts.missing_prototype == 1);
    }
}

TEST_CASE("validate rejects inverted thresholds") {
    const PrototypeBank bank = bank_with_class0();
    CHECK_THROWS(validate({}, bank, PpgThresholds{0.2, 0.5, 0.5}, {0}, {1}));
}

TEST_CASE("theta_sim = -1 reduces to pure confidence filtering") {
    const PrototypeBank bank = bank_with_class0();
    const std::set<int> old_classes = {0};
    const std::set<int> current = {2};
    PpgThresholds open{0.5, 0.2, -1.0};
    Rng rng(6);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> logits(5);
        for (double& v : logits) v = rng.uniform(-3, 3);
        std::vector<double> feature(4);
        for (double& v : feature) v = rng.uniform(-1, 1);
        const Detection cand = candidate(softmax(logits), feature);

        const auto r = validate({cand}, bank, open, old_classes, current);
        if (r.counts.excluded_current) continue;
        const double s = cand.scores[0];
        const bool accepted = !r.labels.empty();
        const bool expect = s > 0.2 && s != 0.5;  // strict bands
        CHECK(accepted == expect);
    }
}

TEST_CASE("merge_targets orders, caps, and checks disjointness") {
    PseudoLabelSet pseudo;
    pseudo.labels.push_back({0, Box{0.2, 0.2, 0.1, 0.1}, 0.4, PseudoSource::hard});
    pseudo.labels.push_back({1, Box{0.4, 0.4, 0.1, 0.1}, 0.9, PseudoSource::easy});
    pseudo.labels.push_back({0, Box{0.6, 0.6, 0.1, 0.1}, 0.6, PseudoSource::easy});
    const std::vector<GtObject> real = {{2, Box{0.8, 0.8, 0.1, 0.1}}};

    const auto merged = merge_targets(pseudo, real);
    REQUIRE(merged.size() == 4);
    CHECK(merged[0].cls == 2);   // real first
    CHECK(merged[1].cls == 1);   // then pseudo by descending score
    CHECK(merged[2].cls == 0);
    CHECK(merged[3].cls == 0);

    const auto capped = merge_targets(pseudo, real, 2);
    REQUIRE(capped.size() == 2);
    CHECK(capped[1].cls == 1);  // highest-scoring pseudo survives

    const std::vector<GtObject> overlapping = {{0, Box{0.8, 0.8, 0.1, 0.1}}};
    CHECK_THROWS(merge_targets(pseudo, overlapping));
}

TEST_CASE("distill loss reduces to the plain loss without pseudo-labels") {
    Rng rng(7);
    std::vector<Detection> preds(4);
    for (auto& p : preds) {
        std::vector<double> logits(5);
        for (double& v : logits) v = rng.uniform(-1, 1);
        p = candidate(softmax(logits), {1, 0, 0, 0});
        p.box = Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.2, 0.2};
    }
    const std::vector<GtObject> real = {{2, Box{0.5, 0.5, 0.2, 0.2}}};

    const PseudoLabelSet empty;
    const Assignment a = hungarian(match_cost(real, preds));
    const double expect = detection_loss(real, preds, a).value;
    CHECK(distill_loss(preds, empty, real) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("distill loss equals the union loss under the matching oracle") {
    Rng rng(8);
    std::vector<Detection> preds(6);
    for (auto& p : preds) {
        std::vector<double> logits(5);
        for (double& v : logits) v = rng.uniform(-1, 1);
        p = candidate(softmax(logits), {1, 0, 0, 0});
        p.box = Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.25, 0.25};
    }
    PseudoLabelSet pseudo;
    pseudo.labels.push_back({0, Box{0.3, 0.3, 0.2, 0.2}, 0.7, PseudoSource::easy});
    pseudo.labels.push_back({1, Box{0.7, 0.3, 0.2, 0.2}, 0.4, PseudoSource::hard});
    const std::vector<GtObject> real = {{2, Box{0.3, 0.7, 0.2, 0.2}},
                                        {3, Box{0.7, 0.7, 0.2, 0.2}}};

    const std::vector<GtObject> merged = merge_targets(pseudo, real);
    REQUIRE(merged.size() == 4);
    const BruteForceResult oracle = brute_force_assignment(match_cost(merged, preds));
    Assignment as_assignment;
    as_assignment.pred_for_gt = oracle.pred_for_gt;
    as_assignment.total_cost = oracle.total_cost;
    const double expect = detection_loss(merged, preds, as_assignment).value;

    CHECK(distill_loss(preds, pseudo, real) == doctest::Approx(expect).epsilon(1e-12));
}
