#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdet {

// Experiment configuration: a flat struct mirrored 1:1 by the [section]
// key = value file format documented in the README.
struct ExperimentConfig {
    // [experiment]
    std::uint64_t seed = 42;
    std::string out_dir = "runs/default";

    // [stream]
    int num_classes = 8;
    std::vector<int> tasks = {4, 2, 2};  // classes introduced per task
    int train_per_task = 200;
    int eval_per_task = 50;
    int objects_min = 1;
    int objects_max = 2;
    double noise_sigma = 0.1;
    double box_min = 0.30;
    double box_max = 0.50;

    // [model]
    int image_size = 32;
    int patch_size = 8;
    int feature_dim = 32;
    int heads = 4;
    int num_queries = 10;
    int prompt_len = 4;
    int shared_pool_size = 100;

    // [loss]
    double lambda_l1 = 5.0;
    double lambda_giou = 2.0;
    double no_object_weight = 0.1;
    double lambda_q = 0.1;
    double lambda_ddl = 0.15;
    double theta_ddl_degrees = 90.0;

    // [ppg]
    double tau_high = 0.5;
    double tau_low = 0.2;
    double theta_sim = 0.5;
    int bank_capacity = 256;

    // [train]
    std::string optimizer = "adam";  // adam | sgd
    double learning_rate = 0.001;
    int epochs_per_task = 20;

    // [toggles]
    bool shared_pool = true;
    bool ppg = true;
    bool ddl = true;

    bool operator==(const ExperimentConfig&) const = default;
};

// Raised with "file:line: message" wherever a line is known.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ExperimentConfig parse_config(const std::string& text, const std::string& filename);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace pdet
