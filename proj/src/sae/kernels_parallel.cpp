#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "kernel_detail.hpp"
#include "saelab/sae.hpp"

namespace saelab::sae::kernels {

namespace {

struct ChunkResult {
    double recon = 0.0;
    double sparsity = 0.0;
    std::size_t active = 0;
    double active_sq_sum = 0.0;
};

// Per-calling-thread scratch so that concurrent training runs do not share it.
struct Workspace {
    std::vector<double> partial;  // chunks x params
    std::vector<ChunkResult> chunk;
};

Workspace& workspace() {
    thread_local Workspace ws;
    return ws;
}

struct Args {
    std::size_t n;
    std::size_t d;
    Layout lay;
    bool jump;
    bool want_grad;
    detail::Penalty penalty;
    double eps;
    double inv_b;
    const double* we_t;  // dim x latents
    const double* be;
    const double* wd;
    const double* bd;
    const double* theta;
    const double* nu;
    const double* xs;
    double* per_sample;
};

// One chunk of rows [begin, end). D > 0 fixes the input dimension at compile
// time so the short per-latent loops unroll; D == 0 reads it from args.
template <std::size_t D>
ChunkResult run_chunk(const Args& a, std::size_t begin, std::size_t end, double* gpart) {
    const std::size_t d = D > 0 ? D : a.d;
    const std::size_t n = a.n;
    const double half_eps = 0.5 * a.eps;
    ChunkResult acc;

    std::vector<double> z(n);
    std::vector<std::uint32_t> touched(n);
    double r[D > 0 ? D : 1];
    double g[D > 0 ? D : 1];
    std::vector<double> r_dyn(D > 0 ? 0 : d);
    std::vector<double> g_dyn(D > 0 ? 0 : d);
    double* rv = D > 0 ? r : r_dyn.data();
    double* gv = D > 0 ? g : g_dyn.data();

    for (std::size_t s = 0; s < end - begin; ++s) {
        const double* x = a.xs + (begin + s) * d;
        if constexpr (D > 0) {
            for (std::size_t j = 0; j < n; ++j) {
                double v = a.be[j];
                for (std::size_t k = 0; k < D; ++k) {
                    v += x[k] * a.we_t[k * n + j];
                }
                z[j] = v;
            }
        } else {
            for (std::size_t j = 0; j < n; ++j) {
                z[j] = a.be[j];
            }
            for (std::size_t k = 0; k < d; ++k) {
                const double xk = x[k];
                const double* wk = a.we_t + k * n;
                for (std::size_t j = 0; j < n; ++j) {
                    z[j] += xk * wk[j];
                }
            }
        }
        std::size_t count = 0;
        if (a.jump) {
            const bool band = a.want_grad;
            for (std::size_t j = 0; j < n; ++j) {
                const double v = z[j];
                touched[count] = static_cast<std::uint32_t>(j);
                count += (v > a.theta[j]) | (band & (std::abs(v - a.theta[j]) < half_eps));
            }
        } else {
            for (std::size_t j = 0; j < n; ++j) {
                touched[count] = static_cast<std::uint32_t>(j);
                count += z[j] > 0.0;
            }
        }
        const std::span<const std::uint32_t> live(touched.data(), count);
        for (std::size_t k = 0; k < d; ++k) {
            rv[k] = a.bd[k] - x[k];
        }
        double sp = 0.0;
        for (const std::size_t j : live) {
            const double v = z[j];
            const double cut = a.jump ? a.theta[j] : 0.0;
            if (!(v > cut)) {
                continue;
            }
            ++acc.active;
            acc.active_sq_sum += v * v;
            const double* w = a.wd + j * d;
            for (std::size_t k = 0; k < d; ++k) {
                rv[k] += v * w[k];
            }
            sp += a.penalty(v, a.nu[j]).value;
        }
        double rec = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            rec += rv[k] * rv[k];
        }
        acc.recon += rec;
        acc.sparsity += sp;
        if (a.per_sample != nullptr) {
            a.per_sample[begin + s] = rec + sp;
        }
        if (gpart == nullptr) {
            continue;
        }
        for (std::size_t k = 0; k < d; ++k) {
            gv[k] = 2.0 * rv[k] * a.inv_b;
            gpart[a.lay.decoder_bias() + k] += gv[k];
        }
        for (const std::size_t j : live) {
            const double v = z[j];
            const double cut = a.jump ? a.theta[j] : 0.0;
            const bool gate = v > cut;
            const double f = gate ? v : 0.0;
            const double* w = a.wd + j * d;
            const auto pen = a.penalty(f, a.nu[j]);
            double df = pen.d_f * a.inv_b;
            for (std::size_t k = 0; k < d; ++k) {
                df += w[k] * gv[k];
            }
            if (a.jump && std::abs(v - cut) < half_eps) {
                gpart[a.lay.threshold() + j] += df * (-a.theta[j] / a.eps);
            }
            if (!gate) {
                continue;
            }
            const double dnu_scaled = a.nu[j] > 0.0 ? pen.d_nu * a.inv_b / a.nu[j] : 0.0;
            double* gwd = gpart + a.lay.decoder() + j * d;
            double* gwe = gpart + a.lay.encoder() + j * d;
            for (std::size_t k = 0; k < d; ++k) {
                gwd[k] += f * gv[k] + dnu_scaled * w[k];
                gwe[k] += df * x[k];
            }
            gpart[a.lay.encoder_bias() + j] += df;
        }
    }
    return acc;
}

using ChunkFn = ChunkResult (*)(const Args&, std::size_t, std::size_t, double*);

ChunkFn select_chunk_fn(std::size_t d) {
    switch (d) {
    case 2:
        return run_chunk<2>;
    case 3:
        return run_chunk<3>;
    case 4:
        return run_chunk<4>;
    case 6:
        return run_chunk<6>;
    case 8:
        return run_chunk<8>;
    default:
        return run_chunk<0>;
    }
}

}  // namespace

BatchLoss evaluate_parallel(const SaeModel& model, std::span<const double> batch, std::size_t rows,
                            const Sparsity& sparsity, std::span<double> grad,
                            std::span<double> per_sample) {
    detail::check_shapes(model, batch, rows, grad, per_sample);
    const std::size_t n = model.latents();
    const std::size_t d = model.dim();
    const Layout lay = model.layout();
    const std::size_t nparams = lay.size();
    const bool want_grad = !grad.empty();
    const double* params = model.parameters().data();

    std::vector<double> we_t(d * n);
    std::vector<double> nu(n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < d; ++k) {
            we_t[k * n + j] = params[lay.encoder() + j * d + k];
        }
        const double* w = params + lay.decoder() + j * d;
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            s += w[k] * w[k];
        }
        nu[j] = std::sqrt(s);
    }

    const Args args{n,
                    d,
                    lay,
                    model.nonlinearity() == Nonlinearity::JumpReLU,
                    want_grad,
                    detail::Penalty(sparsity),
                    model.bandwidth,
                    1.0 / static_cast<double>(rows),
                    we_t.data(),
                    params + lay.encoder_bias(),
                    params + lay.decoder(),
                    params + lay.decoder_bias(),
                    params + lay.threshold(),
                    nu.data(),
                    batch.data(),
                    per_sample.empty() ? nullptr : per_sample.data()};
    const ChunkFn chunk_fn = select_chunk_fn(d);

    const std::size_t chunks = (rows + kChunkRows - 1) / kChunkRows;
    Workspace& ws = workspace();
    ws.chunk.assign(chunks, ChunkResult{});
    if (want_grad) {
        ws.partial.assign(chunks * nparams, 0.0);
    }
    double* partial_base = ws.partial.data();
    ChunkResult* chunk_base = ws.chunk.data();

#pragma omp parallel for schedule(static) if (chunks > 1 && !omp_in_parallel())
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t begin = c * kChunkRows;
        const std::size_t end = std::min(rows, begin + kChunkRows);
        chunk_base[c] = chunk_fn(args, begin, end, want_grad ? partial_base + c * nparams : nullptr);
    }

    BatchLoss out;
    for (std::size_t c = 0; c < chunks; ++c) {
        out.recon += ws.chunk[c].recon;
        out.sparsity += ws.chunk[c].sparsity;
        out.active += ws.chunk[c].active;
        out.active_sq_sum += ws.chunk[c].active_sq_sum;
    }
    const double inv_b = 1.0 / static_cast<double>(rows);
    out.recon *= inv_b;
    out.sparsity *= inv_b;
    out.total = out.recon + out.sparsity;

    if (want_grad) {
        double* gout = grad.data();
#pragma omp parallel for schedule(static) if (nparams > 4096 && !omp_in_parallel())
        for (std::size_t p = 0; p < nparams; ++p) {
            double s = 0.0;
            for (std::size_t c = 0; c < chunks; ++c) {
                s += partial_base[c * nparams + p];
            }
            gout[p] = s;
        }
    }
    return out;
}

}  // namespace saelab::sae::kernels
