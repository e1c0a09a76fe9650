#pragma once

#include <vector>

#include "pdet/boxes.hpp"

namespace pdet {

// One predicted object: class scores (softmax over num_classes + 1, the last
// slot being "no object"), a box, and the decoder embedding the prediction
// was read from. The embedding is what the prototype machinery consumes.
struct Detection {
    std::vector<double> scores;
    Box box;
    std::vector<double> feature;

    bool operator==(const Detection&) const = default;
};

struct GtObject {
    int cls = 0;
    Box box;

    bool operator==(const GtObject&) const = default;
};

}  // namespace pdet
