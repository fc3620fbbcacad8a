#pragma once

#include <span>
#include <string>
#include <vector>

namespace crisp::training {

// Row-major stack of feature vectors, one row per batch element.
struct FeatureMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;

    FeatureMatrix() = default;
    FeatureMatrix(int r, int c) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, 0.0) {}

    std::span<double> row(int i) { return {values.data() + static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const double> row(int i) const {
        return {values.data() + static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols)};
    }
};

struct SupConResult {
    double loss = 0.0;
    FeatureMatrix grad;  // dL / d features, same shape as the input
};

// Supervised contrastive loss summed over anchors:
//   L = sum_i -1/|P(i)| sum_{p in P(i)} log( exp(z_i.z_p / tau) / sum_{a != i} exp(z_i.z_a / tau) )
// where P(i) are the other rows sharing row i's label. Each anchor's
// log-sum-exp is shifted by its maximum logit.
// Throws AnchorWithoutPositive, NonUnitFeature (|norm - 1| > unit_tolerance).
double supcon_loss(const FeatureMatrix& features, std::span<const std::string> labels, double tau,
                   double unit_tolerance = 1e-5);
SupConResult supcon_loss_with_grad(const FeatureMatrix& features, std::span<const std::string> labels, double tau,
                                   double unit_tolerance = 1e-5);

}  // namespace crisp::training
