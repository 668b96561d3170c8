#pragma once

// Direct, serial evaluations of the convolution layers from their defining
// formulas. Slow; used as oracles for the factorised production kernels.

#include "sire/network.hpp"

namespace sire {

/// out_i = sum_f self(o, f) f(i)
///       + sum_j rho_n(theta_ij) C rho_m(-theta_ij) rho_m(g_{j->i}) f(j) + bias.
Matrix<double> gem_conv_reference(const GemConv<double>& layer, const TangentFrameAtlas& atlas,
                                  std::span<const double> params, const Matrix<double>& in);

Matrix<double> gat_conv_reference(int in_channels, int out_channels, const IcosphereMesh& mesh,
                                  std::span<const double> params, const Matrix<double>& in);

}  // namespace sire
