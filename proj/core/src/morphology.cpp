#include "strokeseg/morphology.hpp"

namespace strokeseg::morphology {

StructuringElement StructuringElement::full3x3() {
    StructuringElement se;
    se.offsets.reserve(9);
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) se.offsets.emplace_back(dy, dx);
    return se;
}

void StructuringElement::validate() const {
    bool has_center = false;
    for (auto [dy, dx] : offsets) {
        if (dy == 0 && dx == 0) has_center = true;
        bool has_neg = false;
        for (auto [ey, ex] : offsets)
            if (ey == -dy && ex == -dx) { has_neg = true; break; }
        if (!has_neg) throw InvalidConfig("structuring element not symmetric under negation");
    }
    if (!has_center) throw InvalidConfig("structuring element missing (0,0)");
}

namespace {

void check_mask(const ByteTensor& mask) {
    if (mask.rank() != 2) throw ShapeError("morphology expects a 2-d mask");
    for (std::int64_t i = 0; i < mask.numel(); ++i)
        if (mask[i] > 1) throw ShapeError("mask is not binary");
}

enum class Op { Dilate, Erode };

ByteTensor apply(const ByteTensor& mask, const StructuringElement& se, Op op) {
    const int h = mask.dim(0), w = mask.dim(1);
    ByteTensor out({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            bool any = false, all = true;
            for (auto [dy, dx] : se.offsets) {
                const int ny = y + dy, nx = x + dx;
                // outside the frame counts as background
                const bool v =
                    ny >= 0 && ny < h && nx >= 0 && nx < w && mask.at(ny, nx) != 0;
                any = any || v;
                all = all && v;
            }
            out.at(y, x) = (op == Op::Dilate) ? (any ? 1 : 0) : (all ? 1 : 0);
        }
    }
    return out;
}

}  // namespace

ByteTensor dilate(const ByteTensor& mask, const StructuringElement& se) {
    check_mask(mask);
    return apply(mask, se, Op::Dilate);
}

ByteTensor erode(const ByteTensor& mask, const StructuringElement& se) {
    check_mask(mask);
    return apply(mask, se, Op::Erode);
}

ByteTensor boundary_band(const ByteTensor& mask, const StructuringElement& se, int iterations) {
    check_mask(mask);
    ByteTensor dil = mask, ero = mask;
    for (int i = 0; i < iterations; ++i) {
        dil = apply(dil, se, Op::Dilate);
        ero = apply(ero, se, Op::Erode);
    }
    ByteTensor band(mask.shape());
    for (std::int64_t i = 0; i < band.numel(); ++i)
        band[i] = (dil[i] != 0 && ero[i] == 0) ? 1 : 0;
    return band;
}

Tensor weight_map(const IntTensor& labels, const WeightSpec& spec, const StructuringElement& se) {
    if (labels.rank() != 2) throw ShapeError("weight_map expects a 2-d label map");
    const int h = labels.dim(0), w = labels.dim(1);

    ByteTensor pen({h, w}), core({h, w});
    for (std::int64_t i = 0; i < labels.numel(); ++i) {
        const auto v = labels[i];
        if (v < 0 || v > 2) throw ShapeError("weight_map: labels must be in {0,1,2}");
        pen[i] = (v == 1) ? 1 : 0;
        core[i] = (v == 2) ? 1 : 0;
    }

    const ByteTensor band_pen = boundary_band(pen, se, spec.iterations);
    const ByteTensor band_core = boundary_band(core, se, spec.iterations);

    Tensor weights({h, w}, 1.0f);
    for (std::int64_t i = 0; i < weights.numel(); ++i)
        if (band_pen[i] != 0 || band_core[i] != 0) weights[i] = spec.boundary_factor;
    return weights;
}

}  // namespace strokeseg::morphology
