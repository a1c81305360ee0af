// Benchmark of the OpenMP kernels against the serial reference
// implementation on the protocol layer sizes. Also cross-checks that both
// paths agree, since they must compute the same values.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "qbdc/kernels.hpp"
#include "qbdc/ref_kernels.hpp"

using qbdc::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, std::mt19937_64& rng) {
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : t.data) v = u(rng);
    return t;
}

double time_ms(const std::function<void()>& fn, int reps = 5) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0.0;
    for (std::size_t e = 0; e < a.size(); ++e) m = std::max(m, std::abs(a.data[e] - b.data[e]));
    return m;
}

void report(const char* name, double serial_ms, double omp_ms, double diff) {
    std::printf("%-22s serial %8.2f ms   openmp %8.2f ms   speedup %5.2fx   max|diff| %.3g\n", name, serial_ms,
                omp_ms, serial_ms / omp_ms, diff);
}

}  // namespace

int main() {
    std::mt19937_64 rng(42);
    std::printf("threads: %d\n", omp_get_max_threads());

    {
        const Tensor<double> in = random_tensor({64, 20, 13, 13}, rng);
        const Tensor<double> w = random_tensor({40, 20, 3, 3}, rng);
        const Tensor<double> b = random_tensor({40}, rng);
        Tensor<double> out_omp, ref_out;
        const double t_ref = time_ms([&] { ref_out = qbdc::ref::conv2d_forward(in, w, b); });
        const double t_omp = time_ms([&] { qbdc::kernels::conv2d_forward(in, w, b, out_omp); });
        report("conv2d forward", t_ref, t_omp, max_abs_diff(ref_out, out_omp));

        const Tensor<double> dout = random_tensor(out_omp.shape, rng);
        qbdc::ref::ConvGrads rg;
        Tensor<double> din, dw, db;
        const double tb_ref = time_ms([&] { rg = qbdc::ref::conv2d_backward(in, w, dout); });
        const double tb_omp = time_ms([&] { qbdc::kernels::conv2d_backward(in, w, dout, &din, dw, db); });
        report("conv2d backward", tb_ref, tb_omp,
               std::max({max_abs_diff(rg.din, din), max_abs_diff(rg.dw, dw), max_abs_diff(rg.db, db)}));
    }

    {
        const Tensor<double> in = random_tensor({256, 1000}, rng);
        const Tensor<double> w = random_tensor({100, 1000}, rng);
        const Tensor<double> b = random_tensor({100}, rng);
        Tensor<double> out_omp, ref_out;
        const double t_ref = time_ms([&] { ref_out = qbdc::ref::dense_forward(in, w, b); });
        const double t_omp = time_ms([&] { qbdc::kernels::dense_forward(in, w, b, out_omp); });
        report("dense forward", t_ref, t_omp, max_abs_diff(ref_out, out_omp));

        const Tensor<double> dout = random_tensor({256, 100}, rng);
        qbdc::ref::DenseGrads rg;
        Tensor<double> din, dw, db;
        const double tb_ref = time_ms([&] { rg = qbdc::ref::dense_backward(in, w, dout); });
        const double tb_omp = time_ms([&] { qbdc::kernels::dense_backward(in, w, dout, &din, dw, db); });
        report("dense backward", tb_ref, tb_omp,
               std::max({max_abs_diff(rg.din, din), max_abs_diff(rg.dw, dw), max_abs_diff(rg.db, db)}));
    }

    {
        const Tensor<double> in = random_tensor({256, 20, 26, 26}, rng);
        Tensor<double> out_omp, ref_out;
        std::vector<std::int64_t> argmax;
        const double t_ref = time_ms([&] { ref_out = qbdc::ref::maxpool_forward(in, 2); });
        const double t_omp = time_ms([&] { qbdc::kernels::maxpool_forward(in, 2, out_omp, argmax); });
        report("maxpool forward", t_ref, t_omp, max_abs_diff(ref_out, out_omp));
    }

    return 0;
}
