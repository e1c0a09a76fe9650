#include "pdet/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pdet/checkpoint.hpp"
#include "pdet/metrics.hpp"
#include "pdet/rng.hpp"

namespace pdet {

namespace {

// Seed tags for the independent random streams of one run.
enum SeedTag : std::uint64_t {
    kStreamTrain = 1,
    kStreamEval = 2,
    kBackbone = 3,
    kDecoder = 4,
    kSharedPool = 5,
    kPrivateSlab = 6,
    kReservoir = 7,
};

WorldConfig world_config_from(const ExperimentConfig& cfg) {
    WorldConfig w;
    w.num_classes = cfg.num_classes;
    w.image_size = cfg.image_size;
    w.objects_min = cfg.objects_min;
    w.objects_max = cfg.objects_max;
    w.noise_sigma = cfg.noise_sigma;
    w.box_min = cfg.box_min;
    w.box_max = cfg.box_max;
    return w;
}

}  // namespace

std::vector<std::vector<int>> TaskStream::classes_per_task() const {
    std::vector<std::vector<int>> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks) out.push_back(t.classes);
    return out;
}

TaskStream build_stream(const ExperimentConfig& cfg, std::uint64_t seed) {
    const WorldConfig world = world_config_from(cfg);
    TaskStream stream;
    stream.num_classes = cfg.num_classes;

    int next_class = 0;
    for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
        Task task;
        for (int k = 0; k < cfg.tasks[t]; ++k) task.classes.push_back(next_class++);

        for (int i = 0; i < cfg.train_per_task; ++i) {
            const std::uint64_t s =
                Rng::derive(seed, kStreamTrain + 8 * (t * 1000003 + i));
            ToyImage img = make_image(world, s, task.classes);
            // IOD annotation masking: stage-t labels cover only C_t.
            std::vector<GtObject> kept;
            for (const auto& obj : img.objects)
                if (std::find(task.classes.begin(), task.classes.end(), obj.cls) !=
                    task.classes.end())
                    kept.push_back(obj);
            img.objects = std::move(kept);
            task.train.push_back(std::move(img));
        }
        for (int i = 0; i < cfg.eval_per_task; ++i) {
            const std::uint64_t s =
                Rng::derive(seed, kStreamEval + 8 * (t * 1000003 + i));
            task.eval.push_back(make_image(world, s));
        }
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

TrainState init_state(const ExperimentConfig& cfg, std::uint64_t seed) {
    TrainState state;
    state.run_seed = seed;
    state.model.backbone =
        FrozenBackbone::make(cfg.image_size, cfg.patch_size,
                             static_cast<std::size_t>(cfg.feature_dim),
                             Rng::derive(seed, kBackbone));
    state.model.decoder = DecoderLayer::init(
        static_cast<std::size_t>(cfg.feature_dim), static_cast<std::size_t>(cfg.heads),
        static_cast<std::size_t>(cfg.num_queries),
        static_cast<std::size_t>(cfg.num_classes), Rng::derive(seed, kDecoder));
    if (cfg.shared_pool)
        state.model.shared = SharedPool::init(
            static_cast<std::size_t>(cfg.shared_pool_size),
            static_cast<std::size_t>(cfg.prompt_len),
            static_cast<std::size_t>(cfg.feature_dim), Rng::derive(seed, kSharedPool));
    else {
        state.model.shared.prompt_len = static_cast<std::size_t>(cfg.prompt_len);
        state.model.shared.feature_dim = static_cast<std::size_t>(cfg.feature_dim);
    }
    state.model.priv.prompt_len = static_cast<std::size_t>(cfg.prompt_len);
    state.model.priv.feature_dim = static_cast<std::size_t>(cfg.feature_dim);
    state.bank.feature_dim = static_cast<std::size_t>(cfg.feature_dim);
    state.bank.capacity = static_cast<std::size_t>(cfg.bank_capacity);
    return state;
}

LossParams loss_params_from(const ExperimentConfig& cfg) {
    LossParams p;
    p.det.lambda_l1 = cfg.lambda_l1;
    p.det.lambda_giou = cfg.lambda_giou;
    p.det.no_object_weight = cfg.no_object_weight;
    p.match.lambda_l1 = cfg.lambda_l1;
    p.match.lambda_giou = cfg.lambda_giou;
    p.lambda_q = cfg.lambda_q;
    p.lambda_ddl = cfg.lambda_ddl;
    p.theta_ddl = cfg.theta_ddl_degrees * 3.141592653589793 / 180.0;
    p.use_ddl = cfg.ddl;
    return p;
}

std::vector<EvalDetection> eval_detections(const Model& model,
                                           const ToyImage& image, int image_id) {
    const ForwardPass fp = model_forward(model, image);
    std::vector<EvalDetection> out;
    out.reserve(fp.detections.size());
    for (const Detection& det : fp.detections) {
        const std::size_t num_real = det.scores.size() - 1;
        int arg = 0;
        for (std::size_t c = 1; c < num_real; ++c)
            if (det.scores[c] > det.scores[arg]) arg = static_cast<int>(c);
        out.push_back({image_id, arg, det.scores[arg], det.box});
    }
    return out;
}

TaskMetrics evaluate(const Model& model, const TaskStream& stream, int t) {
    std::map<int, std::vector<ScoredBox>> dets_by_class;
    std::map<int, std::vector<GtBox>> gt_by_class;
    std::set<int> seen_classes;
    for (int k = 0; k <= t; ++k)
        for (int cls : stream.tasks[k].classes) seen_classes.insert(cls);

    int image_id = 0;
    for (int k = 0; k <= t; ++k) {
        for (const ToyImage& image : stream.tasks[k].eval) {
            for (const auto& det : eval_detections(model, image, image_id))
                dets_by_class[det.cls].push_back({det.image_id, det.score, det.box});
            for (const GtObject& obj : image.objects)
                if (seen_classes.count(obj.cls))
                    gt_by_class[obj.cls].push_back({image_id, obj.box});
            ++image_id;
        }
    }

    TaskMetrics metrics;
    metrics.task = t;
    for (int cls : seen_classes)
        metrics.per_class_ap[cls] =
            average_precision(dets_by_class[cls], gt_by_class[cls]);

    const MapMetrics maps =
        compute_map_metrics(metrics.per_class_ap, stream.classes_per_task(),
                            static_cast<std::size_t>(t));
    metrics.map_p = maps.map_previous;
    metrics.map_c = maps.map_current;
    metrics.map_a = maps.map_all;
    return metrics;
}

TaskMetrics run_stage(TrainState& state, const TaskStream& stream, int t,
                      const ExperimentConfig& cfg) {
    if (t != state.next_task)
        throw std::logic_error("run_stage: stages must run in order");
    if (t < 0 || t >= static_cast<int>(stream.tasks.size()))
        throw std::invalid_argument("run_stage: task index out of range");

    const Task& task = stream.tasks[t];
    const std::set<int> current(task.classes.begin(), task.classes.end());
    std::set<int> old_classes;
    for (int k = 0; k < t; ++k)
        for (int cls : stream.tasks[k].classes) old_classes.insert(cls);

    grow_private(state.model.priv, t, task.classes.size(),
                 Rng::derive(state.run_seed, kPrivateSlab + 8 * t));

    TaskMetrics metrics;
    metrics.task = t;

    if (t > 0) {
        state.teacher = state.model;
        state.teacher_snapshot_bytes = serialize_model(*state.teacher);
    } else {
        state.teacher.reset();
        state.teacher_snapshot_bytes.clear();
    }

    // Per-image training targets. The teacher and the old-class prototypes
    // are both frozen for the whole stage, so pseudo-labels are computed
    // once up front rather than per step.
    const PpgThresholds thresholds{cfg.tau_high, cfg.tau_low, cfg.theta_sim};
    std::vector<std::vector<GtObject>> targets(task.train.size());
    for (std::size_t i = 0; i < task.train.size(); ++i) {
        if (t > 0 && cfg.ppg) {
            const ForwardPass teacher_fp = model_forward(*state.teacher, task.train[i]);
            const PseudoLabelSet pseudo =
                validate(teacher_fp.detections, state.bank, thresholds, old_classes,
                         current);
            metrics.pseudo_easy += pseudo.counts.easy;
            metrics.pseudo_hard += pseudo.counts.hard;
            metrics.pseudo_rejected += pseudo.counts.rejected;
            targets[i] = merge_targets(pseudo, task.train[i].objects,
                                       static_cast<std::size_t>(cfg.num_queries));
        } else {
            targets[i] = task.train[i].objects;
        }
    }

    const LossParams lp = loss_params_from(cfg);
    Rng reservoir_rng(Rng::derive(state.run_seed, kReservoir + 8 * t));

    for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
        const bool final_epoch = epoch == cfg.epochs_per_task - 1;
        for (std::size_t i = 0; i < task.train.size(); ++i) {
            ModelGrads grads = ModelGrads::zeros_like(state.model);
            ForwardPass fp;
            model_loss(state.model, task.train[i], targets[i], lp, &grads, &fp);

            if (final_epoch && !targets[i].empty()) {
                // Prototype features: matched predictions whose argmax class
                // equals the matched ground-truth class, current classes only.
                const Assignment assignment =
                    hungarian(match_cost(targets[i], fp.detections, lp.match));
                std::vector<std::pair<int, std::vector<double>>> feats;
                for (std::size_t g = 0; g < targets[i].size(); ++g) {
                    const int cls = targets[i][g].cls;
                    if (!current.count(cls)) continue;
                    const Detection& det = fp.detections[assignment.pred_for_gt[g]];
                    const std::size_t num_real = det.scores.size() - 1;
                    int arg = 0;
                    for (std::size_t c = 1; c < num_real; ++c)
                        if (det.scores[c] > det.scores[arg]) arg = static_cast<int>(c);
                    if (arg == cls) feats.push_back({cls, det.feature});
                }
                if (!feats.empty())
                    update_prototypes(state.bank, feats, current, reservoir_rng);
            }

            apply_sgd(state.model, grads, cfg.learning_rate);
        }
    }

    freeze_classes(state.bank, current);
    state.next_task = t + 1;

    const TaskMetrics eval_metrics = evaluate(state.model, stream, t);
    metrics.map_p = eval_metrics.map_p;
    metrics.map_c = eval_metrics.map_c;
    metrics.map_a = eval_metrics.map_a;
    metrics.per_class_ap = eval_metrics.per_class_ap;
    return metrics;
}

namespace {

std::string shortest(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw std::runtime_error("report: to_chars failed");
    return std::string(buf, ptr);
}

}  // namespace

std::string report_csv(const std::vector<TaskMetrics>& metrics) {
    std::string out = "task,metric,value\n";
    for (const TaskMetrics& m : metrics) {
        const std::string task = std::to_string(m.task + 1);
        if (m.map_p) out += task + ",map_p," + shortest(*m.map_p) + "\n";
        out += task + ",map_c," + shortest(m.map_c) + "\n";
        out += task + ",map_a," + shortest(m.map_a) + "\n";
        out += task + ",pseudo_easy," + std::to_string(m.pseudo_easy) + "\n";
        out += task + ",pseudo_hard," + std::to_string(m.pseudo_hard) + "\n";
        out += task + ",pseudo_rejected," + std::to_string(m.pseudo_rejected) + "\n";
    }
    return out;
}

std::string report_json(const ExperimentConfig& cfg,
                        const std::vector<TaskMetrics>& metrics) {
    nlohmann::ordered_json root;
    root["config"] = serialize_config(cfg);
    root["tasks"] = nlohmann::ordered_json::array();
    for (const TaskMetrics& m : metrics) {
        nlohmann::ordered_json jt;
        jt["task"] = m.task + 1;
        if (m.map_p) jt["map_p"] = *m.map_p;
        jt["map_c"] = m.map_c;
        jt["map_a"] = m.map_a;
        nlohmann::ordered_json ap;
        for (const auto& [cls, value] : m.per_class_ap)
            ap[std::to_string(cls)] = value;
        jt["per_class_ap"] = ap;
        jt["pseudo"] = {{"easy", m.pseudo_easy},
                        {"hard", m.pseudo_hard},
                        {"rejected", m.pseudo_rejected}};
        root["tasks"].push_back(jt);
    }
    return root.dump(2) + "\n";
}

RunOutputs run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    const TaskStream stream = build_stream(cfg, cfg.seed);
    TrainState state = init_state(cfg, cfg.seed);

    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    RunOutputs out;
    for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
        out.metrics.push_back(run_stage(state, stream, static_cast<int>(t), cfg));
        if (!out_dir.empty()) {
            Checkpoint cp{state.model, state.bank, state.next_task};
            save_checkpoint(out_dir + "/checkpoint_task" + std::to_string(t + 1) + ".bin",
                            cp);
        }
    }
    out.csv = report_csv(out.metrics);

    if (!out_dir.empty()) {
        std::ofstream csv(out_dir + "/report.csv", std::ios::binary);
        csv << out.csv;
        std::ofstream json(out_dir + "/summary.json", std::ios::binary);
        json << report_json(cfg, out.metrics);
    }
    return out;
}

}  // namespace pdet
