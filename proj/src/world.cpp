#include "pdet/world.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pdet/rng.hpp"

namespace pdet {

void render_glyph(std::vector<double>& pixels, int image_size, const GtObject& obj) {
    const int size = image_size;
    const Corners c = to_corners(obj.box);
    const int x0 = std::clamp(static_cast<int>(std::lround(c.x1 * size)), 0, size);
    const int x1 = std::clamp(static_cast<int>(std::lround(c.x2 * size)), 0, size);
    const int y0 = std::clamp(static_cast<int>(std::lround(c.y1 * size)), 0, size);
    const int y1 = std::clamp(static_cast<int>(std::lround(c.y2 * size)), 0, size);
    const int bw = std::max(1, x1 - x0);
    const int bh = std::max(1, y1 - y0);

    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const int px = x - x0, py = y - y0;
            const double u = (px + 0.5) / bw - 0.5;  // local coords in [-.5, .5]
            const double v = (py + 0.5) / bh - 0.5;
            double value = 0.0;
            switch (obj.cls % 8) {
                case 0:  // filled square
                    value = 1.0;
                    break;
                case 1:  // disk
                    value = (u * u + v * v <= 0.25) ? 1.0 : 0.0;
                    break;
                case 2:  // horizontal stripes
                    value = (py % 4 < 2) ? 1.0 : 0.0;
                    break;
                case 3:  // vertical stripes
                    value = (px % 4 < 2) ? 1.0 : 0.0;
                    break;
                case 4:  // checkerboard
                    value = ((px / 2 + py / 2) % 2 == 0) ? 1.0 : 0.0;
                    break;
                case 5:  // ring
                    value = (std::max(std::abs(u), std::abs(v)) >= 0.3) ? 1.0 : 0.25;
                    break;
                case 6:  // diagonal stripes
                    value = ((px + py) % 4 < 2) ? 1.0 : 0.0;
                    break;
                case 7:  // cross
                    value = (std::abs(u) < 0.15 || std::abs(v) < 0.15) ? 1.0 : 0.0;
                    break;
            }
            pixels[y * size + x] = value;
        }
    }
}

ToyImage make_image(const WorldConfig& cfg, std::uint64_t seed,
                    std::span<const int> first_class_pool) {
    if (cfg.objects_min < 1 || cfg.objects_max < cfg.objects_min)
        throw std::invalid_argument("make_image: bad objects range");
    Rng rng(seed);

    ToyImage image;
    image.height = cfg.image_size;
    image.width = cfg.image_size;
    image.pixels.assign(static_cast<std::size_t>(cfg.image_size) * cfg.image_size, 0.0);

    const int count = cfg.objects_min +
                      static_cast<int>(rng.uniform_int(cfg.objects_max - cfg.objects_min + 1));
    for (int n = 0; n < count; ++n) {
        GtObject obj;
        if (n == 0 && !first_class_pool.empty())
            obj.cls = first_class_pool[rng.uniform_int(first_class_pool.size())];
        else
            obj.cls = static_cast<int>(rng.uniform_int(cfg.num_classes));
        obj.box.w = rng.uniform(cfg.box_min, cfg.box_max);
        obj.box.h = rng.uniform(cfg.box_min, cfg.box_max);
        const double mx = obj.box.w / 2.0 + 0.02;
        const double my = obj.box.h / 2.0 + 0.02;
        obj.box.cx = rng.uniform(mx, 1.0 - mx);
        obj.box.cy = rng.uniform(my, 1.0 - my);
        render_glyph(image.pixels, cfg.image_size, obj);
        image.objects.push_back(obj);
    }

    if (cfg.noise_sigma > 0.0)
        for (double& p : image.pixels) p += rng.normal(0.0, cfg.noise_sigma);
    return image;
}

}  // namespace pdet
