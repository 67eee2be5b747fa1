#pragma once

#include <cstddef>
#include <vector>

namespace mvrom::testing {

// Independent Burgers integrator: pseudo-spectral in x (FFTW, 2/3-rule
// dealiasing), integrating-factor RK4 in time. Input and output live on a
// uniform grid of u0.size() points.
std::vector<double> burgers_rk4(const std::vector<double>& u0, double viscosity, double t, double dt);

// Samples `fine` (size n*stride) at every stride-th point.
std::vector<double> subsample(const std::vector<double>& fine, std::size_t stride);

}  // namespace mvrom::testing
