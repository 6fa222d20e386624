// Times the OpenMP kernels against their serial reference twins at the
// default model scale and reports speedup plus the largest output
// difference (which must be zero: both variants accumulate each output
// element in the same order).
//
//   poec_bench [repeats]
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "poec/kernels.hpp"
#include "poec/numerics.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::vector<double> randu(poec::Rng& rng, size_t n) {
    std::vector<double> v(n);
    for (auto& e : v) e = rng.next_normal();
    return v;
}

struct Result {
    double t_ref = 0.0, t_omp = 0.0, diff = 0.0;
};

void report(const char* name, const Result& r) {
    std::printf("%-22s serial %8.3f ms   openmp %8.3f ms   speedup %5.2fx   max|diff| %g\n",
                name, r.t_ref * 1e3, r.t_omp * 1e3, r.t_ref / r.t_omp, r.diff);
}

template <typename F>
double time_best(int repeats, F&& f) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        f();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

}  // namespace

int main(int argc, char** argv) {
    const int repeats = argc > 1 ? std::atoi(argv[1]) : 3;
    poec::Rng rng(7);
    std::printf("threads available: %d, repeats: %d\n", poec::max_threads(), repeats);

    // capsule projection at model scale: 576 senders dim 8 -> 20 receivers dim 16
    {
        const int I = 576, J = 20, din = 8, dout = 16;
        const auto x = randu(rng, size_t(I) * din);
        const auto w = randu(rng, size_t(I) * J * din * dout);
        std::vector<double> a(size_t(I) * J * dout), b(a.size());
        Result r;
        r.t_ref = time_best(repeats, [&] {
            poec::ref::capsule_predictions(x.data(), I, din, w.data(), J, dout, a.data());
        });
        r.t_omp = time_best(repeats, [&] {
            poec::kern::capsule_predictions(x.data(), I, din, w.data(), J, dout, b.data());
        });
        r.diff = max_abs_diff(a, b);
        report("capsule_predictions", r);
    }

    // reverse transport at model scale
    {
        const int I = 576, J = 20, din = 8, dout = 16;
        const auto xo = randu(rng, size_t(J) * dout);
        const auto w = randu(rng, size_t(I) * J * din * dout);
        const auto c = randu(rng, size_t(I) * J);
        std::vector<double> a(size_t(I) * din), b(a.size());
        Result r;
        r.t_ref = time_best(repeats, [&] {
            poec::ref::reverse_collect(xo.data(), w.data(), c.data(), I, J, din, dout, a.data());
        });
        r.t_omp = time_best(repeats, [&] {
            poec::kern::reverse_collect(xo.data(), w.data(), c.data(), I, J, din, dout, b.data());
        });
        r.diff = max_abs_diff(a, b);
        report("reverse_collect", r);
    }

    // contrastive outer products at model scale
    {
        const int I = 576, J = 20, din = 8, dout = 16;
        const auto x = randu(rng, size_t(I) * din);
        const auto z = randu(rng, size_t(J) * dout);
        const auto xr = randu(rng, size_t(I) * din);
        const auto zr = randu(rng, size_t(J) * dout);
        const auto c = randu(rng, size_t(I) * J);
        std::vector<double> a(size_t(I) * J * din * dout), b(a.size());
        Result r;
        r.t_ref = time_best(repeats, [&] {
            poec::ref::cd_outer(x.data(), z.data(), xr.data(), zr.data(), c.data(), I, J,
                                din, dout, a.data());
        });
        r.t_omp = time_best(repeats, [&] {
            poec::kern::cd_outer(x.data(), z.data(), xr.data(), zr.data(), c.data(), I, J,
                                 din, dout, b.data());
        });
        r.diff = max_abs_diff(a, b);
        report("cd_outer", r);
    }

    // second conv layer at model scale: 20x20x128 -> 6x6x128, 9x9 stride 2
    {
        const int h = 20, w = 20, cin = 128, k = 9, cout = 128, stride = 2;
        const int oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
        const auto in = randu(rng, size_t(h) * w * cin);
        const auto f = randu(rng, size_t(k) * k * cin * cout);
        const auto bias = randu(rng, cout);
        std::vector<double> a(size_t(oh) * ow * cout), b(a.size());
        Result r;
        r.t_ref = time_best(repeats, [&] {
            poec::ref::conv_forward(in.data(), h, w, cin, f.data(), k, cout, stride,
                                    bias.data(), a.data());
        });
        r.t_omp = time_best(repeats, [&] {
            poec::kern::conv_forward(in.data(), h, w, cin, f.data(), k, cout, stride,
                                     bias.data(), b.data());
        });
        r.diff = max_abs_diff(a, b);
        report("conv_forward", r);

        // matching transposed pass 6x6x128 -> 20x20x128
        const auto tin = randu(rng, size_t(oh) * ow * cout);
        std::vector<double> ta(size_t(h) * w * cin), tb(ta.size());
        Result tr;
        tr.t_ref = time_best(repeats, [&] {
            poec::ref::tconv_forward(tin.data(), oh, ow, cout, f.data(), k, cin, stride,
                                     nullptr, ta.data(), h, w);
        });
        tr.t_omp = time_best(repeats, [&] {
            poec::kern::tconv_forward(tin.data(), oh, ow, cout, f.data(), k, cin, stride,
                                      nullptr, tb.data(), h, w);
        });
        tr.diff = max_abs_diff(ta, tb);
        report("tconv_forward", tr);

        // filter gradient for the same layer
        std::vector<double> ga(size_t(k) * k * cin * cout, 0.0), gb(ga.size(), 0.0);
        Result gr;
        gr.t_ref = time_best(repeats, [&] {
            std::fill(ga.begin(), ga.end(), 0.0);
            poec::ref::conv_filter_grad(in.data(), h, w, cin, tin.data(), oh, ow, cout, k,
                                        stride, ga.data());
        });
        gr.t_omp = time_best(repeats, [&] {
            std::fill(gb.begin(), gb.end(), 0.0);
            poec::kern::conv_filter_grad(in.data(), h, w, cin, tin.data(), oh, ow, cout, k,
                                         stride, gb.data());
        });
        gr.diff = max_abs_diff(ga, gb);
        report("conv_filter_grad", gr);
    }

    return 0;
}
