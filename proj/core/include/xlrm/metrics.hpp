#pragma once

#include "xlrm/phantom.hpp"

namespace xlrm {

// 10*log10(1 / MSE) over all voxels, data range 1.0. Identical volumes give
// +infinity.
double psnr_3d(const VolumeGrid& pred, const VolumeGrid& gt);

// Mean over axial (z) slices of 2D SSIM with an 11x11 Gaussian window
// (sigma 1.5), K1=0.01, K2=0.03, data range 1.0. Window statistics use
// valid-only placement, so the resolution must be at least 11.
double ssim_slices(const VolumeGrid& pred, const VolumeGrid& gt);

}  // namespace xlrm
