#include "poec/kernels.hpp"

#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace poec {

namespace {
int g_default_threads = 0;  // 0 = runtime default, captured lazily
}

void set_max_threads(int n) {
#ifdef _OPENMP
    if (g_default_threads == 0) g_default_threads = omp_get_max_threads();
    omp_set_num_threads(n > 0 ? n : g_default_threads);
#else
    (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace kern {

void capsule_predictions(const double* x, int n_in, int d_in, const double* w,
                         int n_out, int d_out, double* pred) {
    const size_t mat = static_cast<size_t>(d_out) * d_in;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n_in; ++i) {
        const double* xi = x + static_cast<size_t>(i) * d_in;
        for (int j = 0; j < n_out; ++j) {
            const double* wm = w + (static_cast<size_t>(i) * n_out + j) * mat;
            double* out = pred + (static_cast<size_t>(i) * n_out + j) * d_out;
            for (int r = 0; r < d_out; ++r) {
                double acc = 0.0;
                const double* row = wm + static_cast<size_t>(r) * d_in;
                for (int c = 0; c < d_in; ++c) acc += row[c] * xi[c];
                out[r] = acc;
            }
        }
    }
}

void weighted_collect(const double* pred, const double* coeffs, int n_in,
                      int n_out, int d_out, double* z) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n_out; ++j) {
        double* zj = z + static_cast<size_t>(j) * d_out;
        for (int r = 0; r < d_out; ++r) zj[r] = 0.0;
        for (int i = 0; i < n_in; ++i) {
            const double c = coeffs[static_cast<size_t>(i) * n_out + j];
            const double* p = pred + (static_cast<size_t>(i) * n_out + j) * d_out;
            for (int r = 0; r < d_out; ++r) zj[r] += c * p[r];
        }
    }
}

void reverse_collect(const double* x_out, const double* w, const double* coeffs,
                     int n_in, int n_out, int d_in, int d_out, double* z_rec) {
    const size_t mat = static_cast<size_t>(d_out) * d_in;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n_in; ++i) {
        double* zi = z_rec + static_cast<size_t>(i) * d_in;
        for (int c = 0; c < d_in; ++c) zi[c] = 0.0;
        for (int j = 0; j < n_out; ++j) {
            const double cij = coeffs[static_cast<size_t>(i) * n_out + j];
            const double* wm = w + (static_cast<size_t>(i) * n_out + j) * mat;
            const double* xj = x_out + static_cast<size_t>(j) * d_out;
            // w_ij^T x_j accumulated row by row of w_ij
            for (int r = 0; r < d_out; ++r) {
                const double s = cij * xj[r];
                const double* row = wm + static_cast<size_t>(r) * d_in;
                for (int c = 0; c < d_in; ++c) zi[c] += s * row[c];
            }
        }
    }
}

void cd_outer(const double* x, const double* z, const double* x_rec,
              const double* z_rec, const double* coeffs, int n_in, int n_out,
              int d_in, int d_out, double* dw) {
    // Per-capsule scale factors first; shared across all i.
    std::vector<double> a(n_out), b(n_out);
    for (int j = 0; j < n_out; ++j) {
        const double* zj = z + static_cast<size_t>(j) * d_out;
        const double* rj = z_rec + static_cast<size_t>(j) * d_out;
        double nz = 0.0, nr = 0.0;
        for (int r = 0; r < d_out; ++r) nz += zj[r] * zj[r];
        for (int r = 0; r < d_out; ++r) nr += rj[r] * rj[r];
        a[j] = 1.0 / (1.0 + nz);
        b[j] = 1.0 / (1.0 + nr);
    }
    const size_t mat = static_cast<size_t>(d_out) * d_in;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n_in; ++i) {
        const double* xi = x + static_cast<size_t>(i) * d_in;
        const double* xri = x_rec + static_cast<size_t>(i) * d_in;
        for (int j = 0; j < n_out; ++j) {
            const double two_c = 2.0 * coeffs[static_cast<size_t>(i) * n_out + j];
            const double* zj = z + static_cast<size_t>(j) * d_out;
            const double* rj = z_rec + static_cast<size_t>(j) * d_out;
            double* d = dw + (static_cast<size_t>(i) * n_out + j) * mat;
            for (int r = 0; r < d_out; ++r) {
                const double zp = zj[r] * a[j];
                const double rp = rj[r] * b[j];
                double* drow = d + static_cast<size_t>(r) * d_in;
                for (int c = 0; c < d_in; ++c)
                    drow[c] = two_c * (zp * xi[c] - rp * xri[c]);
            }
        }
    }
}

void conv_forward(const double* in, int h, int w, int cin, const double* f,
                  int k, int cout, int stride, const double* bias, double* out) {
    const int oh = (h - k) / stride + 1;
    const int ow = (w - k) / stride + 1;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < oh; ++y) {
        std::vector<double> acc(cout);
        for (int x = 0; x < ow; ++x) {
            for (int co = 0; co < cout; ++co) acc[co] = bias ? bias[co] : 0.0;
            for (int ky = 0; ky < k; ++ky) {
                const double* irow =
                    in + (static_cast<size_t>(y * stride + ky) * w + x * stride) * cin;
                const double* frow = f + static_cast<size_t>(ky) * k * cin * cout;
                for (int kx = 0; kx < k; ++kx) {
                    const double* ip = irow + static_cast<size_t>(kx) * cin;
                    const double* fp = frow + static_cast<size_t>(kx) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double s = ip[ci];
                        const double* fc = fp + static_cast<size_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) acc[co] += s * fc[co];
                    }
                }
            }
            double* op = out + (static_cast<size_t>(y) * ow + x) * cout;
            for (int co = 0; co < cout; ++co) op[co] = acc[co];
        }
    }
}

void tconv_forward(const double* in, int hin, int win, int cout,
                   const double* f, int k, int cin, int stride,
                   const double* bias, double* out, int hout, int wout) {
    // Transposed filter copy ft[ky][kx][co][ci] so the inner update runs
    // contiguously over ci.
    std::vector<double> ft(static_cast<size_t>(k) * k * cin * cout);
    for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
            const double* src = f + (static_cast<size_t>(ky) * k + kx) * cin * cout;
            double* dst = ft.data() + (static_cast<size_t>(ky) * k + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci)
                for (int co = 0; co < cout; ++co)
                    dst[static_cast<size_t>(co) * cin + ci] =
                        src[static_cast<size_t>(ci) * cout + co];
        }
#pragma omp parallel for schedule(static)
    for (int Y = 0; Y < hout; ++Y) {
        std::vector<double> acc(cin);
        for (int X = 0; X < wout; ++X) {
            for (int ci = 0; ci < cin; ++ci) acc[ci] = bias ? bias[ci] : 0.0;
            for (int ky = 0; ky < k; ++ky) {
                const int ys = Y - ky;
                if (ys < 0 || ys % stride) continue;
                const int y = ys / stride;
                if (y >= hin) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int xs = X - kx;
                    if (xs < 0 || xs % stride) continue;
                    const int x = xs / stride;
                    if (x >= win) continue;
                    const double* ip = in + (static_cast<size_t>(y) * win + x) * cout;
                    const double* fp =
                        ft.data() + (static_cast<size_t>(ky) * k + kx) * cin * cout;
                    for (int co = 0; co < cout; ++co) {
                        const double s = ip[co];
                        const double* fc = fp + static_cast<size_t>(co) * cin;
                        for (int ci = 0; ci < cin; ++ci) acc[ci] += s * fc[ci];
                    }
                }
            }
            double* op = out + (static_cast<size_t>(Y) * wout + X) * cin;
            for (int ci = 0; ci < cin; ++ci) op[ci] = acc[ci];
        }
    }
}

void conv_filter_grad(const double* big, int h, int w, int cin,
                      const double* small, int oh, int ow, int cout, int k,
                      int stride, double* df) {
    (void)h;
#pragma omp parallel for collapse(2) schedule(static)
    for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
            double* dfk = df + (static_cast<size_t>(ky) * k + kx) * cin * cout;
            for (int y = 0; y < oh; ++y) {
                const double* brow =
                    big + (static_cast<size_t>(y * stride + ky) * w + kx) * cin;
                const double* srow = small + static_cast<size_t>(y) * ow * cout;
                for (int x = 0; x < ow; ++x) {
                    const double* bp = brow + static_cast<size_t>(x * stride) * cin;
                    const double* sp = srow + static_cast<size_t>(x) * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double s = bp[ci];
                        double* drow = dfk + static_cast<size_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) drow[co] += s * sp[co];
                    }
                }
            }
        }
    }
}

}  // namespace kern
}  // namespace poec
