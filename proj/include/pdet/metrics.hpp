#pragma once

#include <map>
#include <optional>
#include <vector>

#include "pdet/boxes.hpp"

namespace pdet {

struct ScoredBox {
    int image_id = 0;
    double score = 0.0;
    Box box;
};

struct GtBox {
    int image_id = 0;
    Box box;
};

// All-point interpolated average precision at the given IoU threshold.
// Detections are ranked by descending score (ties by image id, then input
// order); each ground truth matches at most one detection, greedily by best
// IoU among the still-unmatched ones. No ground truth -> AP = 0 by
// convention.
double average_precision(const std::vector<ScoredBox>& detections,
                         const std::vector<GtBox>& gt, double iou_thresh = 0.5);

struct MapMetrics {
    std::optional<double> map_previous;  // absent for the first task
    double map_current = 0.0;
    double map_all = 0.0;
};

// Flat per-class means grouped by task: previous = tasks before t, current =
// task t, all = everything seen. Every seen class must have an AP entry.
MapMetrics compute_map_metrics(const std::map<int, double>& per_class_ap,
                               const std::vector<std::vector<int>>& classes_per_task,
                               std::size_t t);

}  // namespace pdet
