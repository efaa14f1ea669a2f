#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace msda {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Finite-difference gradient checks for every differentiable op plus the
// end-to-end tiny network. Prints one line per check; returns false if any
// exceeds its tolerance.
std::vector<GradCheckEntry> run_gradient_suite();
bool report_gradient_suite(std::ostream& os);

} // namespace msda
