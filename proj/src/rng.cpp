#include "crisp/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace crisp {

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::deserialize(const std::string& text) {
    std::istringstream is(text);
    is >> engine_;
}

}  // namespace crisp
