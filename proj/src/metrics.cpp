#include "pdet/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace pdet {

double average_precision(const std::vector<ScoredBox>& detections,
                         const std::vector<GtBox>& gt, double iou_thresh) {
    if (gt.empty()) return 0.0;
    if (detections.empty()) return 0.0;

    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (detections[a].score != detections[b].score)
            return detections[a].score > detections[b].score;
        if (detections[a].image_id != detections[b].image_id)
            return detections[a].image_id < detections[b].image_id;
        return a < b;
    });

    std::vector<bool> gt_matched(gt.size(), false);
    std::vector<double> precision(order.size()), recall(order.size());
    std::size_t tp = 0, fp = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const ScoredBox& det = detections[order[rank]];
        int best_gt = -1;
        double best_iou = 0.0;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            if (gt_matched[g] || gt[g].image_id != det.image_id) continue;
            const double v = iou(det.box, gt[g].box);
            if (v > best_iou) {
                best_iou = v;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0 && best_iou >= iou_thresh) {
            gt_matched[best_gt] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision[rank] = static_cast<double>(tp) / static_cast<double>(tp + fp);
        recall[rank] = static_cast<double>(tp) / static_cast<double>(gt.size());
    }

    // Area under the precision envelope, summed where recall increases.
    double ap = 0.0;
    double max_prec = 0.0;
    for (std::size_t rank = order.size(); rank-- > 0;) {
        max_prec = std::max(max_prec, precision[rank]);
        const double prev_recall = rank == 0 ? 0.0 : recall[rank - 1];
        if (recall[rank] > prev_recall) ap += (recall[rank] - prev_recall) * max_prec;
    }
    return ap;
}

MapMetrics compute_map_metrics(const std::map<int, double>& per_class_ap,
                               const std::vector<std::vector<int>>& classes_per_task,
                               std::size_t t) {
    if (t >= classes_per_task.size())
        throw std::invalid_argument("compute_map_metrics: task index out of range");

    auto mean_over = [&](std::size_t first_task, std::size_t last_task) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t k = first_task; k <= last_task; ++k) {
            for (int cls : classes_per_task[k]) {
                const auto it = per_class_ap.find(cls);
                if (it == per_class_ap.end())
                    throw std::invalid_argument("compute_map_metrics: missing class AP");
                sum += it->second;
                ++n;
            }
        }
        return sum / static_cast<double>(n);
    };

    MapMetrics out;
    if (t > 0) out.map_previous = mean_over(0, t - 1);
    out.map_current = mean_over(t, t);
    out.map_all = mean_over(0, t);
    return out;
}

}  // namespace pdet
