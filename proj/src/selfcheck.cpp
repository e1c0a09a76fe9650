#include "pdet/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "pdet/harness.hpp"
#include "pdet/model.hpp"
#include "pdet/numcore.hpp"
#include "pdet/oracles.hpp"
#include "pdet/ppg.hpp"
#include "pdet/rng.hpp"
#include "pdet/world.hpp"

namespace pdet {

namespace {

constexpr double kPi = 3.141592653589793;

std::string describe(double worst, double tolerance, int points) {
    std::ostringstream os;
    os << "max relative error " << worst << " over " << points
       << " points (tolerance " << tolerance << ")";
    return os.str();
}

}  // namespace

SuiteResult check_ddl_gradient(const SelfcheckOptions& opt) {
    Rng rng(Rng::derive(opt.seed, 11));
    const std::size_t lp = 2, dim = 4;

    SharedPool shared = SharedPool::init(3, lp, dim, rng.next_u64());
    PrivatePool priv;
    priv.prompt_len = lp;
    priv.feature_dim = dim;
    grow_private(priv, 0, 2, rng.next_u64());
    grow_private(priv, 1, 1, rng.next_u64());

    auto set_prompts = [&](std::span<const double> x) {
        std::size_t pos = 0;
        for (auto& e : shared.entries)
            for (double& v : e.prompt.data) v = x[pos++];
        for (auto& s : priv.slabs)
            for (auto& e : s.entries)
                for (double& v : e.prompt.data) v = x[pos++];
    };
    const std::size_t n_params = (3 + 3) * lp * dim;

    double worst = 0.0;
    for (int point = 0; point < opt.gradient_points; ++point) {
        std::vector<double> x(n_params);
        for (double& v : x) v = rng.uniform(-1.0, 1.0);
        set_prompts(x);

        const DdlResult res = ddl_loss(shared, priv, kPi / 2.0, 0.15);
        std::vector<double> analytic;
        for (const auto& t : res.d_shared)
            analytic.insert(analytic.end(), t.data.begin(), t.data.end());
        for (const auto& s : res.d_private)
            for (const auto& t : s)
                analytic.insert(analytic.end(), t.data.begin(), t.data.end());
        if (opt.inject_bug) analytic[0] += 1e-2;

        const auto f = [&](std::span<const double> p) {
            set_prompts(p);
            return ddl_loss(shared, priv, kPi / 2.0, 0.15).value;
        };
        const std::vector<double> numeric = finite_diff_grad(f, x, 1e-6);
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return {"gradient/ddl", worst <= opt.tolerance,
            describe(worst, opt.tolerance, opt.gradient_points)};
}

SuiteResult check_detection_gradient(const SelfcheckOptions& opt) {
    Rng rng(Rng::derive(opt.seed, 12));
    const std::size_t n_preds = 5, n_classes = 4;
    const std::size_t n_scores = n_classes + 1;

    auto random_box = [&]() {
        Box b;
        b.w = rng.uniform(0.2, 0.5);
        b.h = rng.uniform(0.2, 0.5);
        b.cx = rng.uniform(b.w / 2, 1.0 - b.w / 2);
        b.cy = rng.uniform(b.h / 2, 1.0 - b.h / 2);
        return b;
    };

    double worst = 0.0;
    for (int point = 0; point < opt.gradient_points; ++point) {
        std::vector<GtObject> gt(3);
        for (auto& g : gt) {
            g.cls = static_cast<int>(rng.uniform_int(n_classes));
            g.box = random_box();
        }

        std::vector<double> x(n_preds * (n_scores + 4));
        for (double& v : x) v = rng.uniform(-2.0, 2.0);

        const auto build = [&](std::span<const double> p) {
            std::vector<Detection> dets(n_preds);
            for (std::size_t j = 0; j < n_preds; ++j) {
                dets[j].scores =
                    softmax(std::span<const double>(p.data() + j * n_scores, n_scores));
                const double* bx = p.data() + n_preds * n_scores + j * 4;
                const auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
                dets[j].box = Box{sig(bx[0]), sig(bx[1]), sig(bx[2]), sig(bx[3])};
            }
            return dets;
        };

        // The op differentiates at a fixed assignment; pin it at the base point.
        const std::vector<Detection> base = build(x);
        const Assignment assignment = hungarian(match_cost(gt, base));

        const DetectionLossResult res = detection_loss(gt, base, assignment);
        std::vector<double> analytic = res.d_cls_logits.data;
        analytic.insert(analytic.end(), res.d_box_logits.data.begin(),
                        res.d_box_logits.data.end());

        const auto f = [&](std::span<const double> p) {
            return detection_loss(gt, build(p), assignment).value;
        };
        const std::vector<double> numeric = finite_diff_grad(f, x, 1e-6);
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return {"gradient/detection", worst <= opt.tolerance,
            describe(worst, opt.tolerance, opt.gradient_points)};
}

SuiteResult check_ranker_gradient(const SelfcheckOptions& opt) {
    Rng rng(Rng::derive(opt.seed, 13));
    const std::size_t n = 8;

    double worst = 0.0;
    for (int point = 0; point < opt.gradient_points; ++point) {
        std::vector<double> logits(n), target_logits(n);
        for (double& v : logits) v = rng.uniform(-2.0, 2.0);
        for (double& v : target_logits) v = rng.uniform(-2.0, 2.0);
        const std::vector<double> alpha = softmax(logits);
        const std::vector<double> target = softmax(target_logits);

        const RankerLossResult res = ranker_loss(alpha, target, 0.1);
        const auto f = [&](std::span<const double> a) {
            return ranker_loss(a, target, 0.1).value;
        };
        const std::vector<double> numeric = finite_diff_grad(f, alpha, 1e-6);
        worst = std::max(worst, relative_error(res.d_alpha, numeric));
    }
    return {"gradient/ranker", worst <= opt.tolerance,
            describe(worst, opt.tolerance, opt.gradient_points)};
}

SuiteResult check_composite_gradient(const SelfcheckOptions& opt) {
    Rng rng(Rng::derive(opt.seed, 14));

    Model model;
    model.backbone = FrozenBackbone::make(8, 4, 8, rng.next_u64());
    model.decoder = DecoderLayer::init(8, 2, 3, 3, rng.next_u64());
    model.shared = SharedPool::init(2, 2, 8, rng.next_u64());
    model.priv.prompt_len = 2;
    model.priv.feature_dim = 8;
    grow_private(model.priv, 0, 2, rng.next_u64());
    grow_private(model.priv, 1, 1, rng.next_u64());  // slab 0 now frozen

    WorldConfig world;
    world.num_classes = 3;
    world.image_size = 8;
    world.objects_min = 1;
    world.objects_max = 2;
    world.box_min = 0.3;
    world.box_max = 0.6;
    const ToyImage image = make_image(world, rng.next_u64());

    LossParams params;

    const std::size_t n_params = flatten_params(model).size();
    double worst = 0.0;
    for (int point = 0; point < opt.gradient_points; ++point) {
        std::vector<double> x(n_params);
        for (double& v : x) v = rng.uniform(-0.5, 0.5);
        unflatten_params(model, x);

        ModelGrads grads = ModelGrads::zeros_like(model);
        model_loss(model, image, image.objects, params, &grads);
        const std::vector<double> analytic = flatten_grads(model, grads);

        Model scratch = model;
        const auto f = [&](std::span<const double> p) {
            unflatten_params(scratch, p);
            return model_loss(scratch, image, image.objects, params, nullptr).total;
        };
        const std::vector<double> numeric = finite_diff_grad(f, x, 1e-6);
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return {"gradient/composite", worst <= opt.tolerance,
            describe(worst, opt.tolerance, opt.gradient_points)};
}

SuiteResult check_hungarian_oracle(const SelfcheckOptions& opt) {
    Rng rng(Rng::derive(opt.seed, 15));
    int mismatches = 0;
    for (int trial = 0; trial < opt.hungarian_trials; ++trial) {
        const std::size_t m = 1 + rng.uniform_int(6);
        const std::size_t n = m + rng.uniform_int(8 - m + 1);
        Tensor cost = Tensor::zeros({m, n});
        for (double& v : cost.data) v = rng.uniform(-5.0, 5.0);

        const Assignment got = hungarian(cost);
        const BruteForceResult want = brute_force_assignment(cost);
        if (got.total_cost != want.total_cost || got.pred_for_gt != want.pred_for_gt)
            ++mismatches;
    }
    std::ostringstream os;
    os << mismatches << " mismatches in " << opt.hungarian_trials << " trials";
    return {"hungarian/brute-force", mismatches == 0, os.str()};
}

namespace {

enum class Outcome { easy, hard, rejected, excluded };

Outcome classify(const Detection& cand, const PrototypeBank& bank,
                 const PpgThresholds& thresholds, const std::set<int>& old_classes,
                 const std::set<int>& current_classes) {
    const PseudoLabelSet r =
        validate({cand}, bank, thresholds, old_classes, current_classes);
    if (r.counts.excluded_current) return Outcome::excluded;
    if (r.counts.easy) return Outcome::easy;
    if (r.counts.hard) return Outcome::hard;
    return Outcome::rejected;
}

}  // namespace

SuiteResult check_ppg_partition(const SelfcheckOptions& opt) {
    Rng rng(Rng::derive(opt.seed, 16));
    const std::size_t dim = 8;
    const std::set<int> old_classes = {0, 1};
    const std::set<int> current_classes = {2, 3};
    const std::size_t n_scores = 7;  // 6 classes + no-object

    PrototypeBank bank;
    bank.feature_dim = dim;
    {
        Rng proto_rng(Rng::derive(opt.seed, 17));
        std::set<int> cur = {0, 1};
        std::vector<std::pair<int, std::vector<double>>> feats;
        for (int cls : cur)
            for (int k = 0; k < 4; ++k) {
                std::vector<double> f(dim);
                for (double& v : f) v = proto_rng.uniform(-1.0, 1.0);
                feats.push_back({cls, f});
            }
        update_prototypes(bank, feats, cur, proto_rng);
        freeze_classes(bank, cur);
    }

    auto random_candidate = [&]() {
        Detection d;
        std::vector<double> logits(n_scores);
        for (double& v : logits) v = rng.uniform(-3.0, 3.0);
        d.scores = softmax(logits);
        d.feature.resize(dim);
        for (double& v : d.feature) v = rng.uniform(-1.0, 1.0);
        d.box = Box{0.5, 0.5, 0.2, 0.2};
        return d;
    };

    const PpgThresholds base{0.5, 0.2, 0.5};
    std::vector<Detection> candidates;
    for (int i = 0; i < opt.partition_candidates; ++i)
        candidates.push_back(random_candidate());

    // Partition: each old-class candidate lands in exactly one bucket, and
    // the buckets add up.
    ValidateCounts totals;
    std::size_t universe = 0;
    for (const Detection& cand : candidates) {
        const PseudoLabelSet r =
            validate({cand}, bank, base, old_classes, current_classes);
        const std::uint64_t buckets =
            r.counts.easy + r.counts.hard + r.counts.rejected;
        if (r.counts.excluded_current) {
            if (buckets != 0)
                return {"ppg/partition", false, "excluded candidate also bucketed"};
            continue;
        }
        if (buckets != 1)
            return {"ppg/partition", false, "candidate not in exactly one bucket"};
        if (r.labels.size() != r.counts.easy + r.counts.hard)
            return {"ppg/partition", false, "label list inconsistent with counts"};
        ++universe;
        totals.easy += r.counts.easy;
        totals.hard += r.counts.hard;
        totals.rejected += r.counts.rejected;
    }
    if (totals.easy + totals.hard + totals.rejected != universe)
        return {"ppg/partition", false, "buckets do not sum to the universe"};

    // Monotonicity: lowering theta_sim never shrinks the accepted set;
    // raising tau_high never grows the easy set. A few hundred candidates
    // per threshold pair keeps this suite quick.
    const std::size_t subset = std::min<std::size_t>(candidates.size(), 500);
    candidates.resize(subset);
    for (int pair = 0; pair < opt.monotonic_pairs; ++pair) {
        const double lo = rng.uniform(-1.0, 1.0);
        const double hi = std::min(1.0, lo + rng.uniform(0.0, 1.0));
        PpgThresholds a = base, b = base;
        a.theta_sim = hi;
        b.theta_sim = lo;
        for (const Detection& cand : candidates) {
            const Outcome oa = classify(cand, bank, a, old_classes, current_classes);
            const Outcome ob = classify(cand, bank, b, old_classes, current_classes);
            const bool accepted_a = oa == Outcome::easy || oa == Outcome::hard;
            const bool accepted_b = ob == Outcome::easy || ob == Outcome::hard;
            if (accepted_a && !accepted_b)
                return {"ppg/partition", false, "theta_sim monotonicity violated"};
        }

        const double th1 = rng.uniform(0.25, 0.9);
        const double th2 = std::min(0.99, th1 + rng.uniform(0.0, 0.09));
        PpgThresholds c = base, d = base;
        c.tau_high = th1;
        d.tau_high = th2;
        for (const Detection& cand : candidates) {
            const bool easy_low =
                classify(cand, bank, c, old_classes, current_classes) == Outcome::easy;
            const bool easy_high =
                classify(cand, bank, d, old_classes, current_classes) == Outcome::easy;
            if (easy_high && !easy_low)
                return {"ppg/partition", false, "tau_high monotonicity violated"};
        }
    }

    std::ostringstream os;
    os << universe << " old-class candidates partitioned; " << opt.monotonic_pairs
       << " threshold pairs monotone";
    return {"ppg/partition", true, os.str()};
}

std::vector<SuiteResult> run_selfcheck(const SelfcheckOptions& opt) {
    return {
        check_ddl_gradient(opt),      check_detection_gradient(opt),
        check_ranker_gradient(opt),   check_composite_gradient(opt),
        check_hungarian_oracle(opt),  check_ppg_partition(opt),
    };
}

}  // namespace pdet
