#pragma once

#include <cstdint>
#include <span>

#include "pdet/detector.hpp"

namespace pdet {

// Synthetic glyph world: each class renders as a distinct geometric pattern
// (filled square, disk, stripes, checker, ...) on a noisy background.
// Identical seed, identical image.
struct WorldConfig {
    int num_classes = 8;
    int image_size = 32;
    int objects_min = 1;
    int objects_max = 2;
    double noise_sigma = 0.1;
    double box_min = 0.30;
    double box_max = 0.50;
};

// Draws objects (optionally forcing the first one's class from a given set,
// the way stage datasets are curated around their new classes), renders the
// glyphs, then adds Gaussian pixel noise. The returned annotation list is
// complete; callers mask it per protocol.
ToyImage make_image(const WorldConfig& cfg, std::uint64_t seed,
                    std::span<const int> first_class_pool = {});

// Renders one glyph into the pixel buffer (used by make_image; exposed for
// tests).
void render_glyph(std::vector<double>& pixels, int image_size, const GtObject& obj);

}  // namespace pdet
