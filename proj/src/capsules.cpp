#include "poec/capsules.hpp"

#include <cmath>
#include <string>

#include "poec/error.hpp"
#include "poec/kernels.hpp"

namespace poec {

void CapsuleLayer::set_cap(int i, std::span<const double> v) {
    if (static_cast<int>(v.size()) != dim)
        throw ShapeError("set_cap: vector dimension mismatch");
    auto c = cap(i);
    for (int k = 0; k < dim; ++k) c[k] = v[k];
}

PredictionWeights PredictionWeights::random(int n_in, int n_out, int d_in,
                                            int d_out, Rng& rng, double stddev) {
    PredictionWeights w(n_in, n_out, d_in, d_out);
    for (auto& e : w.w) e = stddev * rng.next_normal();
    return w;
}

FiringVector FiringVector::from_mask(uint32_t mask, int n) {
    FiringVector f;
    f.bits.resize(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) f.bits[j] = (mask >> j) & 1u;
    return f;
}

uint32_t FiringVector::to_mask() const {
    uint32_t m = 0;
    for (size_t j = 0; j < bits.size(); ++j)
        if (bits[j]) m |= 1u << j;
    return m;
}

Vec squash(std::span<const double> z) {
    const double n = norm(z);
    Vec out(z.size(), 0.0);
    if (n == 0.0) return out;
    // |z|/(1+|z|^2) written overflow-safe; the output norm is n*factor < 1.
    const double factor = 1.0 / (n + 1.0 / n);
    for (size_t k = 0; k < z.size(); ++k) out[k] = z[k] * factor;
    return out;
}

Vec unsquash(std::span<const double> x) {
    const double m = norm(x);
    Vec out(x.size(), 0.0);
    if (m == 0.0) return out;
    if (m >= 1.0)
        throw DomainError("unsquash: capsule norm " + std::to_string(m) + " >= 1");
    const double scale = std::sqrt(m / (1.0 - m)) / m;
    for (size_t k = 0; k < x.size(); ++k) out[k] = x[k] * scale;
    return out;
}

double squash_magnitude_as_sigmoid(std::span<const double> z) {
    const double n = norm(z);
    if (n == 0.0) return 0.0;
    const double t = 2.0 * std::log(n);  // log |z|^2
    return 1.0 / (1.0 + std::exp(-t));
}

CapsuleLayer squash_layer(const CapsuleLayer& z) {
    CapsuleLayer out(z.count, z.dim);
    for (int i = 0; i < z.count; ++i) out.set_cap(i, squash(z.cap(i)));
    return out;
}

namespace {

void check_forward_shapes(const CapsuleLayer& x, const PredictionWeights& w) {
    if (x.count != w.n_in || x.dim != w.d_in)
        throw ShapeError("capsule layer (" + std::to_string(x.count) + "x" +
                         std::to_string(x.dim) + ") does not match weights (" +
                         std::to_string(w.n_in) + "x" + std::to_string(w.d_in) + " in)");
}

void check_routing_shapes(const PredictionWeights& w, const RoutingState& c) {
    if (c.n_in != w.n_in || c.n_out != w.n_out)
        throw ShapeError("routing state does not match weight grid");
}

// Softmax over the sender index per receiver column.
void normalize_coeffs(RoutingState& st) {
    for (int j = 0; j < st.n_out; ++j) {
        double mx = st.logits[j];
        for (int i = 1; i < st.n_in; ++i)
            mx = std::max(mx, st.logits[static_cast<size_t>(i) * st.n_out + j]);
        double sum = 0.0;
        for (int i = 0; i < st.n_in; ++i) {
            const double e = std::exp(st.logits[static_cast<size_t>(i) * st.n_out + j] - mx);
            st.coeffs[static_cast<size_t>(i) * st.n_out + j] = e;
            sum += e;
        }
        for (int i = 0; i < st.n_in; ++i)
            st.coeffs[static_cast<size_t>(i) * st.n_out + j] /= sum;
    }
}

}  // namespace

RouteResult route(const CapsuleLayer& x, const PredictionWeights& w, int n_iters) {
    check_forward_shapes(x, w);
    if (n_iters < 1) throw DomainError("route: n_iters must be >= 1");

    std::vector<double> pred(static_cast<size_t>(w.n_in) * w.n_out * w.d_out);
    kern::capsule_predictions(x.data.data(), w.n_in, w.d_in, w.w.data(), w.n_out,
                              w.d_out, pred.data());

    RoutingState st(w.n_in, w.n_out, n_iters);
    CapsuleLayer z(w.n_out, w.d_out);
    for (int iter = 0; iter < n_iters; ++iter) {
        normalize_coeffs(st);
        kern::weighted_collect(pred.data(), st.coeffs.data(), w.n_in, w.n_out,
                               w.d_out, z.data.data());
        for (int i = 0; i < w.n_in; ++i) {
            std::span<const double> pij{pred.data() + (static_cast<size_t>(i) * w.n_out) * w.d_out,
                                        static_cast<size_t>(w.n_out) * w.d_out};
            for (int j = 0; j < w.n_out; ++j)
                st.logits[static_cast<size_t>(i) * w.n_out + j] +=
                    cosine(pij.subspan(static_cast<size_t>(j) * w.d_out, w.d_out), z.cap(j));
        }
    }
    return {std::move(st), std::move(z)};
}

CapsuleLayer route_reverse(const CapsuleLayer& x_out, const PredictionWeights& w,
                           const RoutingState& c) {
    if (x_out.count != w.n_out || x_out.dim != w.d_out)
        throw ShapeError("route_reverse: output layer does not match weights");
    check_routing_shapes(w, c);
    CapsuleLayer z_rec(w.n_in, w.d_in);
    kern::reverse_collect(x_out.data.data(), w.w.data(), c.coeffs.data(), w.n_in,
                          w.n_out, w.d_in, w.d_out, z_rec.data.data());
    return z_rec;
}

CapsuleLayer collect_preactivations(const CapsuleLayer& x, const PredictionWeights& w,
                                    const RoutingState& c) {
    check_forward_shapes(x, w);
    check_routing_shapes(w, c);
    std::vector<double> pred(static_cast<size_t>(w.n_in) * w.n_out * w.d_out);
    kern::capsule_predictions(x.data.data(), w.n_in, w.d_in, w.w.data(), w.n_out,
                              w.d_out, pred.data());
    CapsuleLayer z(w.n_out, w.d_out);
    kern::weighted_collect(pred.data(), c.coeffs.data(), w.n_in, w.n_out, w.d_out,
                           z.data.data());
    return z;
}

double energy(const CapsuleLayer& x, const FiringVector& firing,
              const PredictionWeights& w, const RoutingState& c) {
    if (static_cast<int>(firing.bits.size()) != w.n_out)
        throw ShapeError("energy: firing vector length != receiver count");
    const CapsuleLayer z = collect_preactivations(x, w, c);
    double e = 0.0;
    for (int j = 0; j < w.n_out; ++j) {
        if (!firing.bits[j]) continue;
        const double n = norm(z.cap(j));
        if (n < 1e-300)
            throw SingularEnergyError("energy: firing capsule " + std::to_string(j) +
                                      " has zero pre-activation");
        e -= 2.0 * std::log(n);
    }
    return e;
}

double conditional_firing_prob(const CapsuleLayer& x, const PredictionWeights& w,
                               const RoutingState& c, int j) {
    if (j < 0 || j >= w.n_out) throw ShapeError("conditional_firing_prob: bad index");
    const CapsuleLayer z = collect_preactivations(x, w, c);
    const double n = norm(z.cap(j));
    if (n == 0.0) return 0.0;
    return 1.0 / (1.0 / (n * n) + 1.0);  // |z|^2/(1+|z|^2), overflow-safe
}

double log_unnormalized_marginal(const CapsuleLayer& x, const PredictionWeights& w,
                                 const RoutingState& c) {
    const CapsuleLayer z = collect_preactivations(x, w, c);
    double acc = 0.0;
    for (int j = 0; j < w.n_out; ++j) {
        const double n2 = dot(z.cap(j), z.cap(j));
        acc += std::log1p(n2);
    }
    return acc;
}

double unnormalized_marginal(const CapsuleLayer& x, const PredictionWeights& w,
                             const RoutingState& c) {
    return std::exp(log_unnormalized_marginal(x, w, c));
}

std::vector<double> brute_force_joint(const CapsuleLayer& x, const PredictionWeights& w,
                                      const RoutingState& c) {
    const int J = w.n_out;
    if (J > 12)
        throw ShapeError("brute_force_joint: " + std::to_string(J) +
                         " capsules exceeds the 2^12 enumeration bound");
    const CapsuleLayer z = collect_preactivations(x, w, c);
    std::vector<double> log_n2(static_cast<size_t>(J));
    for (int j = 0; j < J; ++j) {
        const double n = norm(z.cap(j));
        log_n2[j] = 2.0 * std::log(n);  // -inf for a dead capsule -> weight 0
    }
    const uint32_t total = 1u << J;
    std::vector<double> table(total);
    double sum = 0.0;
    for (uint32_t mask = 0; mask < total; ++mask) {
        double lw = 0.0;
        for (int j = 0; j < J; ++j)
            if ((mask >> j) & 1u) lw += log_n2[j];
        table[mask] = std::exp(lw);  // exp(-E)
        sum += table[mask];
    }
    for (auto& p : table) p /= sum;
    return table;
}

}  // namespace poec
