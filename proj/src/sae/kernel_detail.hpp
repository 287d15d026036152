#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include "saelab/sae.hpp"

namespace saelab::sae::detail {

/// Sparsity penalty of one latent as a function of its activation f and
/// decoder norm nu, with both partial derivatives.
struct Penalty {
    bool tanh = false;
    double scale = 0.0;  // lambda or lambda_s
    double c = 1.0;

    explicit Penalty(const Sparsity& s) {
        if (const auto* l1 = std::get_if<L1Penalty>(&s)) {
            scale = l1->lambda;
        } else {
            const auto& t = std::get<TanhPenalty>(s);
            tanh = true;
            scale = t.lambda_s;
            c = t.c;
        }
    }

    struct Value {
        double value;
        double d_f;
        double d_nu;
    };

    Value operator()(double f, double nu) const noexcept {
        if (!tanh) {
            return {scale * f * nu, scale * nu, scale * f};
        }
        const double t = std::tanh(c * f * nu);
        const double s = scale * (1.0 - t * t) * c;
        return {scale * t, s * nu, s * f};
    }
};

inline void check_shapes(const SaeModel& model, std::span<const double> batch, std::size_t rows,
                         std::span<double> grad, std::span<double> per_sample) {
    if (rows == 0) {
        throw std::invalid_argument("SAE loss: batch is empty");
    }
    if (batch.size() != rows * model.dim()) {
        throw std::invalid_argument("SAE loss: batch has " + std::to_string(batch.size()) +
                                    " values, expected rows * dim = " +
                                    std::to_string(rows * model.dim()));
    }
    if (!grad.empty() && grad.size() != model.layout().size()) {
        throw std::invalid_argument("SAE loss: gradient buffer has wrong size");
    }
    if (!per_sample.empty() && per_sample.size() != rows) {
        throw std::invalid_argument("SAE loss: per-sample buffer has wrong size");
    }
}

}  // namespace saelab::sae::detail
