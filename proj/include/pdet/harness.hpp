#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pdet/config.hpp"
#include "pdet/model.hpp"
#include "pdet/ppg.hpp"
#include "pdet/world.hpp"

namespace pdet {

// One task of the incremental stream. Train images carry annotations masked
// to the task's classes (the pixels still contain whatever the world drew);
// eval images keep their full annotation lists.
struct Task {
    std::vector<int> classes;
    std::vector<ToyImage> train;
    std::vector<ToyImage> eval;
};

struct TaskStream {
    int num_classes = 0;
    std::vector<Task> tasks;

    std::vector<std::vector<int>> classes_per_task() const;
};

TaskStream build_stream(const ExperimentConfig& cfg, std::uint64_t seed);

struct TaskMetrics {
    int task = 0;  // 0-based
    std::optional<double> map_p;
    double map_c = 0.0;
    double map_a = 0.0;
    std::map<int, double> per_class_ap;
    std::uint64_t pseudo_easy = 0;
    std::uint64_t pseudo_hard = 0;
    std::uint64_t pseudo_rejected = 0;
};

struct TrainState {
    Model model;
    PrototypeBank bank;
    int next_task = 0;
    std::uint64_t run_seed = 0;

    // The frozen previous-stage model, kept until the next stage starts so
    // its immutability can be audited against the snapshot bytes.
    std::optional<Model> teacher;
    std::string teacher_snapshot_bytes;
};

TrainState init_state(const ExperimentConfig& cfg, std::uint64_t seed);

LossParams loss_params_from(const ExperimentConfig& cfg);

// One incremental stage: grow the private pool, snapshot the teacher (t>0),
// build per-image targets (real labels merged with PPG pseudo-labels when
// enabled), run the SGD epochs with prototype collection in the final epoch,
// freeze the new prototypes, and evaluate on every seen task's eval set.
// Stages must run in order.
TaskMetrics run_stage(TrainState& state, const TaskStream& stream, int t,
                      const ExperimentConfig& cfg);

// Per-query detections of one image for evaluation (argmax over real
// classes; the no-object probability only suppresses through the softmax).
struct EvalDetection {
    int image_id = 0;
    int cls = 0;
    double score = 0.0;
    Box box;
};

std::vector<EvalDetection> eval_detections(const Model& model,
                                           const ToyImage& image, int image_id);

TaskMetrics evaluate(const Model& model, const TaskStream& stream, int t);

// CSV rows `task,metric,value` (tasks 1-based; map_p only from task 2 on).
// Doubles are printed in shortest round-trip form, so reports from equal
// runs are byte-identical.
std::string report_csv(const std::vector<TaskMetrics>& metrics);

std::string report_json(const ExperimentConfig& cfg,
                        const std::vector<TaskMetrics>& metrics);

struct RunOutputs {
    std::vector<TaskMetrics> metrics;
    std::string csv;
};

// Runs every stage. With a non-empty out_dir, writes report.csv,
// summary.json and a checkpoint per stage.
RunOutputs run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace pdet
