#include "crisp/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crisp/error.hpp"

namespace crisp::training {
namespace {

void check_inputs(const FeatureMatrix& f, std::span<const std::string> labels, double tau, double unit_tolerance) {
    if (!(tau > 0.0)) fail(ErrorCode::InvalidArgument, "supcon_loss: tau must be positive");
    if (labels.size() != static_cast<std::size_t>(f.rows))
        fail(ErrorCode::ShapeMismatch, "supcon_loss: one label per feature row required");
    for (int i = 0; i < f.rows; ++i) {
        double n2 = 0.0;
        for (double v : f.row(i)) n2 += v * v;
        if (std::abs(std::sqrt(n2) - 1.0) > unit_tolerance)
            fail(ErrorCode::NonUnitFeature, "supcon_loss: feature " + std::to_string(i) + " is not unit norm");
    }
    for (int i = 0; i < f.rows; ++i) {
        const auto n = std::count(labels.begin(), labels.end(), labels[i]);
        if (n < 2)
            fail(ErrorCode::AnchorWithoutPositive, "supcon_loss: label '" + labels[i] + "' has no positive in the batch");
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

SupConResult evaluate(const FeatureMatrix& f, std::span<const std::string> labels, double tau, bool want_grad) {
    const int n = f.rows;
    std::vector<double> logits(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int a = i + 1; a < n; ++a) {
            const double l = dot(f.row(i), f.row(a)) / tau;
            logits[static_cast<std::size_t>(i) * n + a] = l;
            logits[static_cast<std::size_t>(a) * n + i] = l;
        }

    SupConResult result;
    // coeff[i][a] = dL / dlogit(i, a)
    std::vector<double> coeff(want_grad ? logits.size() : 0, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* li = logits.data() + static_cast<std::size_t>(i) * n;
        double max_logit = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < n; ++a)
            if (a != i) max_logit = std::max(max_logit, li[a]);
        double denom = 0.0;
        for (int a = 0; a < n; ++a)
            if (a != i) denom += std::exp(li[a] - max_logit);
        const double log_denom = max_logit + std::log(denom);

        int positives = 0;
        double pos_sum = 0.0;
        for (int p = 0; p < n; ++p)
            if (p != i && labels[p] == labels[i]) {
                ++positives;
                pos_sum += li[p] - log_denom;
            }
        result.loss += -pos_sum / positives;

        if (want_grad) {
            double* ci = coeff.data() + static_cast<std::size_t>(i) * n;
            for (int a = 0; a < n; ++a) {
                if (a == i) continue;
                ci[a] = std::exp(li[a] - log_denom);
                if (labels[a] == labels[i]) ci[a] -= 1.0 / positives;
            }
        }
    }

    if (want_grad) {
        result.grad = FeatureMatrix(n, f.cols);
        for (int i = 0; i < n; ++i) {
            auto gi = result.grad.row(i);
            for (int a = 0; a < n; ++a) {
                if (a == i) continue;
                // logit(i, a) appears as anchor i and as anchor a.
                const double w = (coeff[static_cast<std::size_t>(i) * n + a] + coeff[static_cast<std::size_t>(a) * n + i]) / tau;
                const auto za = f.row(a);
                for (int k = 0; k < f.cols; ++k) gi[k] += w * za[k];
            }
        }
    }
    return result;
}

}  // namespace

double supcon_loss(const FeatureMatrix& features, std::span<const std::string> labels, double tau,
                   double unit_tolerance) {
    check_inputs(features, labels, tau, unit_tolerance);
    return evaluate(features, labels, tau, false).loss;
}

SupConResult supcon_loss_with_grad(const FeatureMatrix& features, std::span<const std::string> labels, double tau,
                                   double unit_tolerance) {
    check_inputs(features, labels, tau, unit_tolerance);
    return evaluate(features, labels, tau, true);
}

}  // namespace crisp::training
