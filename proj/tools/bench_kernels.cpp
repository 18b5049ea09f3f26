// Timing comparison between the OpenMP kernels and the serial reference
// implementations, plus an end-to-end encoder forward/backward rate at the
// shapes the trainer actually runs.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "radreport/encoder.hpp"
#include "radreport/kernels.hpp"
#include "radreport/model.hpp"
#include "radreport/rng.hpp"

using namespace radreport;

namespace {

double time_call(const std::function<void()>& fn, int iters) {
    fn();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
    return dt.count() / iters;
}

std::vector<float> randn(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

void bench_matmul(int64_t m, int64_t k, int64_t n) {
    const auto a = randn(static_cast<size_t>(m * k), 1);
    const auto b = randn(static_cast<size_t>(k * n), 2);
    std::vector<float> c(static_cast<size_t>(m * n));
    const double gflop = 2.0 * static_cast<double>(m) * static_cast<double>(k) *
                         static_cast<double>(n) / 1e9;
    const int iters = gflop > 0.2 ? 5 : 20;
    const double t_par =
        time_call([&] { kern::matmul(a.data(), b.data(), c.data(), m, k, n); }, iters);
    const double t_ser =
        time_call([&] { kern::serial::matmul(a.data(), b.data(), c.data(), m, k, n); }, iters);
    std::printf("matmul %5lldx%4lldx%4lld  parallel %7.2f ms (%6.2f GF/s)  serial %7.2f ms "
                "(%6.2f GF/s)  speedup %.2fx\n",
                static_cast<long long>(m), static_cast<long long>(k),
                static_cast<long long>(n), 1e3 * t_par, gflop / t_par, 1e3 * t_ser,
                gflop / t_ser, t_ser / t_par);
}

void bench_encoder(int64_t batch, int64_t seq) {
    ModelConfig c;
    c.vocab_size = 2000;
    c.max_seq_len = static_cast<int32_t>(seq);
    c.hidden_dim = 128;
    c.n_layers = 2;
    c.n_heads = 4;
    c.ff_dim = 512;
    c.dropout_rate = 0.0f;
    c.seed = 3;
    auto model = make_pretrain_model<float>(c);
    auto grads = model.like();
    auto params = model.named_params(&grads);

    Rng rng(9);
    Batch b;
    for (int64_t i = 0; i < batch; ++i) {
        TokenSequence s;
        s.ids.push_back(Vocab::kCls);
        for (int64_t t = 1; t + 1 < seq; ++t) {
            s.ids.push_back(static_cast<int32_t>(5 + rng.bounded(1990)));
        }
        s.ids.push_back(Vocab::kSep);
        s.attention_mask.assign(static_cast<size_t>(seq), 1);
        b.append(s);
    }
    std::vector<int64_t> rows;
    std::vector<int32_t> targets;
    for (int64_t i = 1; i + 1 < batch * seq; i += 7) {
        rows.push_back(i);
        targets.push_back(42);
    }

    const double t_fwd = time_call(
        [&] {
            MlmState<float> st;
            model_mlm_forward(model, b, rows, targets, false, nullptr, st);
        },
        3);
    const double t_both = time_call(
        [&] {
            MlmState<float> st;
            model_mlm_forward(model, b, rows, targets, false, nullptr, st);
            for (auto& p : params) p.grad->zero();
            model_mlm_backward(model, st, grads);
        },
        3);
    std::printf("encoder fwd      batch %3lld seq %3lld: %8.2f ms\n",
                static_cast<long long>(batch), static_cast<long long>(seq), 1e3 * t_fwd);
    std::printf("encoder fwd+bwd  batch %3lld seq %3lld: %8.2f ms\n",
                static_cast<long long>(batch), static_cast<long long>(seq), 1e3 * t_both);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads = %d\n\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled (serial build)\n\n");
#endif
    bench_matmul(1024, 128, 128);
    bench_matmul(1024, 128, 512);
    bench_matmul(8192, 128, 128);
    bench_matmul(1024, 128, 2000);
    std::printf("\n");
    bench_encoder(32, 32);
    bench_encoder(32, 128);
    return 0;
}
