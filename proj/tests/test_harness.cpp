#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "pdet/checkpoint.hpp"
#include "pdet/harness.hpp"

using namespace pdet;

namespace {

// Small but non-trivial stream: 2 tasks, enough steps for the dynamics to
// show while keeping the suite quick.
ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.seed = 9001;
    cfg.num_classes = 4;
    cfg.tasks = {2, 2};
    cfg.train_per_task = 60;
    cfg.eval_per_task = 20;
    cfg.shared_pool_size = 30;
    cfg.num_queries = 8;
    cfg.epochs_per_task = 10;
    cfg.out_dir.clear();
    return cfg;
}

ExperimentConfig micro_config() {
    ExperimentConfig cfg = tiny_config();
    cfg.train_per_task = 20;
    cfg.eval_per_task = 8;
    cfg.epochs_per_task = 3;
    return cfg;
}

}  // namespace

TEST_CASE("stream generation is deterministic and masked") {
    const ExperimentConfig cfg = micro_config();
    const TaskStream a = build_stream(cfg, cfg.seed);
    const TaskStream b = build_stream(cfg, cfg.seed);
    REQUIRE(a.tasks.size() == 2);
    CHECK(a.tasks[0].train[0].pixels == b.tasks[0].train[0].pixels);
    CHECK(a.tasks[1].eval[3].pixels == b.tasks[1].eval[3].pixels);
    CHECK(a.tasks[0].train[5].objects == b.tasks[0].train[5].objects);

    // Task classes partition [0, num_classes).
    CHECK(a.tasks[0].classes == std::vector<int>{0, 1});
    CHECK(a.tasks[1].classes == std::vector<int>{2, 3});

    // Annotation masking: stage-t training labels only reference C_t; every
    // train image keeps at least its forced first object.
    for (std::size_t t = 0; t < a.tasks.size(); ++t) {
        const std::set<int> allowed(a.tasks[t].classes.begin(),
                                    a.tasks[t].classes.end());
        for (const ToyImage& img : a.tasks[t].train) {
            CHECK(!img.objects.empty());
            for (const GtObject& obj : img.objects) CHECK(allowed.count(obj.cls));
        }
    }
}

TEST_CASE("stages must run in order") {
    const ExperimentConfig cfg = micro_config();
    const TaskStream stream = build_stream(cfg, cfg.seed);
    TrainState state = init_state(cfg, cfg.seed);
    CHECK_THROWS(run_stage(state, stream, 1, cfg));
}

TEST_CASE("run_stage freeze invariants") {
    const ExperimentConfig cfg = micro_config();
    const TaskStream stream = build_stream(cfg, cfg.seed);
    TrainState state = init_state(cfg, cfg.seed);

    const std::string backbone_before = serialize_backbone(state.model.backbone);
    run_stage(state, stream, 0, cfg);

    const std::string slab0_after_stage0 = serialize_slab(state.model.priv.slabs[0]);
    std::map<int, std::string> frozen_protos;
    for (int cls : stream.tasks[0].classes)
        if (state.bank.classes.count(cls)) {
            CHECK(state.bank.classes.at(cls).frozen);
            frozen_protos[cls] = serialize_prototype(state.bank.classes.at(cls));
        }
    CHECK(!frozen_protos.empty());

    run_stage(state, stream, 1, cfg);

    // (a) earlier private slabs byte-identical
    CHECK(serialize_slab(state.model.priv.slabs[0]) == slab0_after_stage0);
    CHECK(!state.model.priv.slabs[0].trainable);
    CHECK(state.model.priv.slabs[1].trainable);
    // (b) frozen backbone untouched
    CHECK(serialize_backbone(state.model.backbone) == backbone_before);
    // (c) teacher byte-identical to its snapshot
    REQUIRE(state.teacher.has_value());
    CHECK(serialize_model(*state.teacher) == state.teacher_snapshot_bytes);
    // (d) frozen prototypes untouched
    for (const auto& [cls, bytes] : frozen_protos)
        CHECK(serialize_prototype(state.bank.classes.at(cls)) == bytes);
}

TEST_CASE("run_experiment is deterministic") {
    const ExperimentConfig cfg = micro_config();
    const RunOutputs a = run_experiment(cfg, "");
    const RunOutputs b = run_experiment(cfg, "");
    CHECK(a.csv == b.csv);
    CHECK(!a.csv.empty());
}

TEST_CASE("csv schema and metric identity") {
    const ExperimentConfig cfg = micro_config();
    const RunOutputs out = run_experiment(cfg, "");

    CHECK(out.csv.rfind("task,metric,value\n", 0) == 0);
    CHECK(out.csv.find("1,map_c,") != std::string::npos);
    CHECK(out.csv.find("2,map_p,") != std::string::npos);
    CHECK(out.csv.find("1,map_p,") == std::string::npos);  // undefined at task 1
    CHECK(out.csv.find("1,pseudo_easy,0") != std::string::npos);

    REQUIRE(out.metrics.size() == 2);
    CHECK(!out.metrics[0].map_p.has_value());
    REQUIRE(out.metrics[1].map_p.has_value());

    // mAP@A equals the class-count-weighted mean of mAP@P and mAP@C.
    const double n_old = 2.0, n_cur = 2.0;
    const TaskMetrics& last = out.metrics[1];
    CHECK(std::abs((n_old + n_cur) * last.map_a -
                   (n_old * *last.map_p + n_cur * last.map_c)) <= 1e-12);

    for (const auto& [cls, ap] : last.per_class_ap) {
        CHECK(ap >= 0.0);
        CHECK(ap <= 1.0);
    }
}

TEST_CASE("pseudo-label supervision preserves old-class performance") {
    ExperimentConfig cfg = tiny_config();
    cfg.ppg = true;
    const RunOutputs with_ppg = run_experiment(cfg, "");
    cfg.ppg = false;
    const RunOutputs without_ppg = run_experiment(cfg, "");

    REQUIRE(with_ppg.metrics[1].map_p.has_value());
    REQUIRE(without_ppg.metrics[1].map_p.has_value());
    // The qualitative claim: pseudo-labels strictly improve retention.
    CHECK(*with_ppg.metrics[1].map_p > *without_ppg.metrics[1].map_p);

    // Pseudo-label counters only move when the module is on.
    CHECK(with_ppg.metrics[1].pseudo_easy + with_ppg.metrics[1].pseudo_hard +
              with_ppg.metrics[1].pseudo_rejected >
          0);
    CHECK(without_ppg.metrics[1].pseudo_easy == 0);
}

TEST_CASE("eval detections expose one prediction per query") {
    const ExperimentConfig cfg = micro_config();
    const TaskStream stream = build_stream(cfg, cfg.seed);
    const TrainState state = init_state(cfg, cfg.seed);
    Model model = state.model;
    grow_private(model.priv, 0, 2, 1);

    const auto dets = eval_detections(model, stream.tasks[0].eval[0], 7);
    CHECK(dets.size() == static_cast<std::size_t>(cfg.num_queries));
    for (const auto& d : dets) {
        CHECK(d.image_id == 7);
        CHECK(d.cls >= 0);
        CHECK(d.cls < cfg.num_classes);
        CHECK(d.score > 0.0);
        CHECK(d.score < 1.0);
    }
}

TEST_CASE("checkpoints are written per stage") {
    ExperimentConfig cfg = micro_config();
    const std::string dir = "test_harness_outputs";
    const RunOutputs out = run_experiment(cfg, dir);
    (void)out;
    const Checkpoint cp1 = load_checkpoint(dir + "/checkpoint_task1.bin");
    const Checkpoint cp2 = load_checkpoint(dir + "/checkpoint_task2.bin");
    CHECK(cp1.next_task == 1);
    CHECK(cp2.next_task == 2);
    CHECK(cp2.model.priv.slabs.size() == 2);
    std::filesystem::remove_all(dir);
}
