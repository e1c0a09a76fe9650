#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "pdet/detection.hpp"
#include "pdet/matching.hpp"

namespace pdet {

class Rng;

// Per-class feature memory and its mean. Once a class's task ends the
// prototype freezes for the rest of the run.
struct ClassPrototype {
    std::vector<double> prototype;
    std::vector<std::vector<double>> features;
    bool frozen = false;
    std::uint64_t seen = 0;  // total features offered, for reservoir sampling

    bool operator==(const ClassPrototype&) const = default;
};

struct PrototypeBank {
    std::size_t feature_dim = 0;
    std::size_t capacity = 256;  // per-class feature cap, reservoir beyond
    std::map<int, ClassPrototype> classes;
};

// Appends features of correctly-classified current-task detections and
// recomputes each touched prototype as the mean of its store. Touching a
// frozen class or a class outside current_classes throws.
void update_prototypes(PrototypeBank& bank,
                       const std::vector<std::pair<int, std::vector<double>>>& feats,
                       const std::set<int>& current_classes, Rng& rng);

void freeze_classes(PrototypeBank& bank, const std::set<int>& classes);

struct PpgThresholds {
    double tau_high = 0.5;
    double tau_low = 0.2;
    double theta_sim = 0.5;
};

enum class PseudoSource { easy, hard };

struct PseudoLabel {
    int cls = 0;
    Box box;
    double score = 0.0;
    PseudoSource source = PseudoSource::easy;
};

struct ValidateCounts {
    std::uint64_t easy = 0;
    std::uint64_t hard = 0;
    std::uint64_t rejected = 0;
    std::uint64_t missing_prototype = 0;  // subset of rejected
    std::uint64_t excluded_current = 0;   // outside the partition universe
};

struct PseudoLabelSet {
    std::vector<PseudoLabel> labels;
    ValidateCounts counts;
};

// Two-stage validation of teacher candidates. A candidate's class is its
// argmax over old classes and its confidence the score of that class;
// candidates whose overall argmax (over real classes) is a current-task
// class are excluded up front, since current classes carry real labels.
//   s > tau_high                      -> easy
//   tau_low < s < tau_high            -> hard iff cos(f, p_c) >= theta_sim
//   otherwise (including s == tau_high) -> rejected
// A missing or degenerate prototype rejects the candidate and is counted.
PseudoLabelSet validate(const std::vector<Detection>& candidates,
                        const PrototypeBank& bank, const PpgThresholds& thresholds,
                        const std::set<int>& old_classes,
                        const std::set<int>& current_classes);

// Merged target set: real ground truths first, then pseudo-labels by
// descending score. Pseudo and real class sets must be disjoint. When
// max_targets > 0 the lowest-scoring pseudo-labels are dropped to fit.
std::vector<GtObject> merge_targets(const PseudoLabelSet& pseudo,
                                    const std::vector<GtObject>& real,
                                    std::size_t max_targets = 0);

// The distillation objective is the ordinary set-prediction loss against the
// union of refined pseudo-labels and current-task ground truths.
double distill_loss(const std::vector<Detection>& student_preds,
                    const PseudoLabelSet& pseudo,
                    const std::vector<GtObject>& real_gt,
                    const DetectionLossParams& det_params = {},
                    const MatchCostParams& match_params = {});

}  // namespace pdet
