#include <benchmark/benchmark.h>

#include <random>

#include "saelab/experiments.hpp"
#include "saelab/sae.hpp"

namespace sae = saelab::sae;
namespace ex = saelab::experiments;

namespace {

struct Problem {
    sae::SaeModel model;
    std::vector<double> batch;
    std::vector<double> grad;
};

Problem make_problem(std::size_t latents, std::size_t dim, std::size_t rows) {
    Problem p{sae::SaeModel::initialized(latents, dim, sae::Nonlinearity::ReLU, 1, 1.0), {}, {}};
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    p.batch.resize(rows * dim);
    for (auto& v : p.batch) {
        v = g(rng);
    }
    // Negative biases so roughly a tenth of the latents fire, as in trained models.
    for (auto& b : p.model.encoder_bias()) {
        b = -1.2;
    }
    p.grad.resize(p.model.layout().size());
    return p;
}

void BM_SaeSerial(benchmark::State& state) {
    auto p = make_problem(state.range(0), state.range(1), 2048);
    for (auto _ : state) {
        auto l = sae::kernels::evaluate_serial(p.model, p.batch, 2048, sae::L1Penalty{0.1}, p.grad);
        benchmark::DoNotOptimize(l);
    }
    state.SetItemsProcessed(state.iterations() * 2048);
}

void BM_SaeParallel(benchmark::State& state) {
    auto p = make_problem(state.range(0), state.range(1), 2048);
    for (auto _ : state) {
        auto l =
            sae::kernels::evaluate_parallel(p.model, p.batch, 2048, sae::L1Penalty{0.1}, p.grad);
        benchmark::DoNotOptimize(l);
    }
    state.SetItemsProcessed(state.iterations() * 2048);
}

saelab::io::Matrix unit_rows(std::size_t latents, std::size_t dim) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    saelab::io::Matrix u{latents, dim, std::vector<double>(latents * dim)};
    for (std::size_t i = 0; i < latents; ++i) {
        double n = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            u(i, k) = g(rng);
            n += u(i, k) * u(i, k);
        }
        for (std::size_t k = 0; k < dim; ++k) {
            u(i, k) /= std::sqrt(n);
        }
    }
    return u;
}

void BM_NnSerial(benchmark::State& state) {
    const auto u = unit_rows(state.range(0), state.range(1));
    const std::vector<std::uint8_t> dead(u.rows, 0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ex::kernels::nn_cosine_serial(u, dead, 0.97));
    }
}

void BM_NnParallel(benchmark::State& state) {
    const auto u = unit_rows(state.range(0), state.range(1));
    const std::vector<std::uint8_t> dead(u.rows, 0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ex::kernels::nn_cosine_parallel(u, dead, 0.97));
    }
}

}  // namespace

BENCHMARK(BM_SaeSerial)->Args({64, 2})->Args({256, 8})->Args({1024, 8})->Args({256, 5})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SaeParallel)->Args({64, 2})->Args({256, 8})->Args({1024, 8})->Args({256, 5})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NnSerial)->Args({1024, 8})->Args({4096, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NnParallel)->Args({1024, 8})->Args({4096, 64})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
