#include "pdet/ppg.hpp"

#include <algorithm>
#include <stdexcept>

#include "pdet/numcore.hpp"
#include "pdet/rng.hpp"

namespace pdet {

void update_prototypes(PrototypeBank& bank,
                       const std::vector<std::pair<int, std::vector<double>>>& feats,
                       const std::set<int>& current_classes, Rng& rng) {
    std::set<int> touched;
    for (const auto& [cls, feature] : feats) {
        if (!current_classes.count(cls))
            throw std::invalid_argument("update_prototypes: class not in current task");
        if (bank.feature_dim != 0 && feature.size() != bank.feature_dim)
            throw std::invalid_argument("update_prototypes: feature dim mismatch");
        ClassPrototype& proto = bank.classes[cls];
        if (proto.frozen)
            throw std::invalid_argument("update_prototypes: class is frozen");
        proto.seen += 1;
        if (proto.features.size() < bank.capacity) {
            proto.features.push_back(feature);
        } else {
            // Reservoir: the n-th feature replaces a stored one w.p. cap/n.
            const std::uint64_t j = rng.uniform_int(proto.seen);
            if (j < bank.capacity) proto.features[j] = feature;
        }
        touched.insert(cls);
    }
    for (int cls : touched) {
        ClassPrototype& proto = bank.classes[cls];
        proto.prototype.assign(bank.feature_dim ? bank.feature_dim
                                                : proto.features[0].size(),
                               0.0);
        for (const auto& f : proto.features)
            for (std::size_t d = 0; d < f.size(); ++d) proto.prototype[d] += f[d];
        for (double& v : proto.prototype)
            v /= static_cast<double>(proto.features.size());
    }
}

void freeze_classes(PrototypeBank& bank, const std::set<int>& classes) {
    for (int cls : classes) {
        auto it = bank.classes.find(cls);
        if (it != bank.classes.end()) it->second.frozen = true;
    }
}

PseudoLabelSet validate(const std::vector<Detection>& candidates,
                        const PrototypeBank& bank, const PpgThresholds& thresholds,
                        const std::set<int>& old_classes,
                        const std::set<int>& current_classes) {
    if (!(thresholds.tau_low > 0.0 && thresholds.tau_low < thresholds.tau_high &&
          thresholds.tau_high < 1.0))
        throw std::invalid_argument("validate: need 0 < tau_low < tau_high < 1");

    PseudoLabelSet out;
    if (old_classes.empty()) return out;

    for (const Detection& cand : candidates) {
        if (cand.scores.size() < 2)
            throw std::invalid_argument("validate: candidate score vector too short");
        const std::size_t num_real = cand.scores.size() - 1;

        int global_arg = 0;
        for (std::size_t c = 1; c < num_real; ++c)
            if (cand.scores[c] > cand.scores[global_arg]) global_arg = static_cast<int>(c);
        if (current_classes.count(global_arg)) {
            ++out.counts.excluded_current;
            continue;
        }

        int cls = -1;
        for (int c : old_classes)
            if (cls < 0 || cand.scores[c] > cand.scores[cls]) cls = c;
        const double s = cand.scores[cls];

        if (s > thresholds.tau_high) {
            out.labels.push_back({cls, cand.box, s, PseudoSource::easy});
            ++out.counts.easy;
        } else if (s > thresholds.tau_low && s < thresholds.tau_high) {
            const auto it = bank.classes.find(cls);
            if (it == bank.classes.end() || it->second.features.empty()) {
                ++out.counts.rejected;
                ++out.counts.missing_prototype;
                continue;
            }
            const auto sim = cosine_similarity(cand.feature, it->second.prototype);
            if (sim && *sim >= thresholds.theta_sim) {
                out.labels.push_back({cls, cand.box, s, PseudoSource::hard});
                ++out.counts.hard;
            } else {
                ++out.counts.rejected;
                if (!sim) ++out.counts.missing_prototype;
            }
        } else {
            ++out.counts.rejected;
        }
    }
    return out;
}

std::vector<GtObject> merge_targets(const PseudoLabelSet& pseudo,
                                    const std::vector<GtObject>& real,
                                    std::size_t max_targets) {
    std::set<int> real_classes;
    for (const auto& g : real) real_classes.insert(g.cls);
    for (const auto& p : pseudo.labels)
        if (real_classes.count(p.cls))
            throw std::invalid_argument("merge_targets: pseudo and real class sets overlap");

    std::vector<PseudoLabel> sorted = pseudo.labels;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const PseudoLabel& a, const PseudoLabel& b) {
                         return a.score > b.score;
                     });

    std::vector<GtObject> merged = real;
    for (const auto& p : sorted) {
        if (max_targets > 0 && merged.size() >= max_targets) break;
        merged.push_back({p.cls, p.box});
    }
    if (max_targets > 0 && merged.size() > max_targets)
        throw std::invalid_argument("merge_targets: real targets alone exceed the cap");
    return merged;
}

double distill_loss(const std::vector<Detection>& student_preds,
                    const PseudoLabelSet& pseudo,
                    const std::vector<GtObject>& real_gt,
                    const DetectionLossParams& det_params,
                    const MatchCostParams& match_params) {
    const std::vector<GtObject> merged = merge_targets(pseudo, real_gt);
    Assignment assignment;
    if (!merged.empty())
        assignment = hungarian(match_cost(merged, student_preds, match_params));
    return detection_loss(merged, student_preds, assignment, det_params).value;
}

}  // namespace pdet
