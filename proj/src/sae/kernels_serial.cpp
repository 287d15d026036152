#include <cmath>
#include <stdexcept>
#include <vector>

#include "kernel_detail.hpp"
#include "saelab/sae.hpp"

namespace saelab::sae::kernels {

BatchLoss evaluate_serial(const SaeModel& model, std::span<const double> batch, std::size_t rows,
                          const Sparsity& sparsity, std::span<double> grad,
                          std::span<double> per_sample) {
    detail::check_shapes(model, batch, rows, grad, per_sample);
    const std::size_t n = model.latents();
    const std::size_t d = model.dim();
    const Layout& lay = model.layout();
    const bool jump = model.nonlinearity() == Nonlinearity::JumpReLU;
    const detail::Penalty penalty(sparsity);
    const auto be = model.encoder_bias();
    const auto bd = model.decoder_bias();
    const auto theta = model.thresholds();
    const double eps = model.bandwidth;
    const double inv_b = 1.0 / static_cast<double>(rows);

    std::vector<double> nu(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (double w : model.decoder_column(j)) {
            s += w * w;
        }
        nu[j] = std::sqrt(s);
    }
    if (!grad.empty()) {
        std::fill(grad.begin(), grad.end(), 0.0);
    }

    BatchLoss out;
    std::vector<double> z(n);
    std::vector<double> f(n);
    std::vector<double> r(d);
    std::vector<double> g(d);
    for (std::size_t s = 0; s < rows; ++s) {
        const auto x = batch.subspan(s * d, d);
        for (std::size_t j = 0; j < n; ++j) {
            const auto w = model.encoder_row(j);
            z[j] = be[j];
            for (std::size_t k = 0; k < d; ++k) {
                z[j] += w[k] * x[k];
            }
            const bool on = jump ? z[j] > theta[j] : z[j] > 0.0;
            f[j] = on ? z[j] : 0.0;
        }
        for (std::size_t k = 0; k < d; ++k) {
            r[k] = bd[k] - x[k];
        }
        double sp = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (f[j] == 0.0) {
                continue;
            }
            ++out.active;
            out.active_sq_sum += f[j] * f[j];
            const auto w = model.decoder_column(j);
            for (std::size_t k = 0; k < d; ++k) {
                r[k] += f[j] * w[k];
            }
            sp += penalty(f[j], nu[j]).value;
        }
        double rec = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            rec += r[k] * r[k];
        }
        out.recon += rec;
        out.sparsity += sp;
        if (!per_sample.empty()) {
            per_sample[s] = rec + sp;
        }
        if (grad.empty()) {
            continue;
        }
        for (std::size_t k = 0; k < d; ++k) {
            g[k] = 2.0 * r[k] * inv_b;
            grad[lay.decoder_bias() + k] += g[k];
        }
        for (std::size_t j = 0; j < n; ++j) {
            const bool gate = jump ? z[j] > theta[j] : z[j] > 0.0;
            const bool near = jump && std::abs(z[j] - theta[j]) < 0.5 * eps;
            if (!gate && !near) {
                continue;
            }
            const auto w = model.decoder_column(j);
            const auto pen = penalty(f[j], nu[j]);
            double df = pen.d_f * inv_b;
            for (std::size_t k = 0; k < d; ++k) {
                df += w[k] * g[k];
            }
            if (near) {
                grad[lay.threshold() + j] += df * (-theta[j] / eps);
            }
            if (!gate) {
                continue;
            }
            const double dnu = pen.d_nu * inv_b;
            for (std::size_t k = 0; k < d; ++k) {
                double gw = f[j] * g[k];
                if (nu[j] > 0.0) {
                    gw += dnu * w[k] / nu[j];
                }
                grad[lay.decoder() + j * d + k] += gw;
                grad[lay.encoder() + j * d + k] += df * x[k];
            }
            grad[lay.encoder_bias() + j] += df;
        }
    }
    out.recon *= inv_b;
    out.sparsity *= inv_b;
    out.total = out.recon + out.sparsity;
    return out;
}

}  // namespace saelab::sae::kernels
