#pragma once

#include <cstdint>
#include <vector>

#include "umc/backbone.hpp"
#include "umc/gradcheck.hpp"

namespace umc {

/// Settings of the tiny model used for whole-model gradient checks:
/// d = 8, depth 1, 2 heads, patch 1, top-k 2 selection, fusion refiner of depth 1.
DiTConfig tiny_model_config();

/// Gradient checks in double precision of sel_softmax under every strategy kind,
/// of selective attention, and of the whole tiny model on 2x2 images with every
/// parameter drawn at random (zero-initialised gates included):
///   "tiny-backbone"  velocity loss w.r.t. every dit.* tensor, z_t and a direct condition sequence;
///   "tiny-model"     the same loss through text and garment encoding and the refiner,
///                    w.r.t. every parameter and the garment image.
std::vector<GradCheckReport> model_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace umc
