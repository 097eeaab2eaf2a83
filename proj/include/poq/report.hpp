#pragma once

#include <string>

#include "poq/experiment.hpp"

namespace poq {

// Rebuilds a ConvergenceReport (curves, plateau epochs, speedups) from a
// curves.csv written earlier; arm names follow ArmSpec::name().
ConvergenceReport read_curves_csv(const std::string& path, int convergence_window = 5,
                                  double convergence_delta = 0.005);

std::string convergence_summary_text(const ConvergenceReport& report);

} // namespace poq
