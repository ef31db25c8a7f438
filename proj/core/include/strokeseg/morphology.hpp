#pragma once

#include <utility>
#include <vector>

#include "strokeseg/tensor.hpp"

namespace strokeseg::morphology {

/// Neighborhood offsets (dy,dx) for binary dilation/erosion.
/// Must contain (0,0) and be symmetric under negation.
struct StructuringElement {
    std::vector<std::pair<int, int>> offsets;

    static StructuringElement full3x3();
    void validate() const;
};

/// Boundary weighting: band pixels get `boundary_factor`, the rest 1.
struct WeightSpec {
    float boundary_factor = 10.0f;
    int iterations = 1;  // dilation/erosion passes used to form the band
};

/// Binary 2-d masks as 0/1 bytes, shape (H,W). Out-of-bounds neighbors
/// count as background for both operators.
ByteTensor dilate(const ByteTensor& mask, const StructuringElement& se = StructuringElement::full3x3());
ByteTensor erode(const ByteTensor& mask, const StructuringElement& se = StructuringElement::full3x3());

/// dilate^n(mask) AND NOT erode^n(mask).
ByteTensor boundary_band(const ByteTensor& mask,
                         const StructuringElement& se = StructuringElement::full3x3(),
                         int iterations = 1);

/// Per-class boundary bands of labels==1 and labels==2, OR-ed, then
/// mapped to {1, boundary_factor}. Labels must be in {0,1,2}.
Tensor weight_map(const IntTensor& labels, const WeightSpec& spec = {},
                  const StructuringElement& se = StructuringElement::full3x3());

}  // namespace strokeseg::morphology
