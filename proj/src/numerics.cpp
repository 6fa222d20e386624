#include "poec/numerics.hpp"

#include <cmath>
#include <numbers>

namespace poec {

Mat Mat::identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Vec matvec(const Mat& m, const Vec& v) {
    if (m.cols != static_cast<int>(v.size()))
        throw ShapeError("matvec: matrix has " + std::to_string(m.cols) +
                         " cols, vector has " + std::to_string(v.size()));
    Vec out(static_cast<size_t>(m.rows), 0.0);
    for (int r = 0; r < m.rows; ++r) {
        double acc = 0.0;
        const double* row = m.data.data() + static_cast<size_t>(r) * m.cols;
        for (int c = 0; c < m.cols; ++c) acc += row[c] * v[c];
        out[r] = acc;
    }
    return out;
}

Vec matvec_t(const Mat& m, const Vec& v) {
    if (m.rows != static_cast<int>(v.size()))
        throw ShapeError("matvec_t: matrix has " + std::to_string(m.rows) +
                         " rows, vector has " + std::to_string(v.size()));
    Vec out(static_cast<size_t>(m.cols), 0.0);
    for (int r = 0; r < m.rows; ++r) {
        const double* row = m.data.data() + static_cast<size_t>(r) * m.cols;
        const double s = v[r];
        for (int c = 0; c < m.cols; ++c) out[c] += s * row[c];
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm(std::span<const double> v) {
    return std::sqrt(dot(v, v));
}

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return (dot(a, b) / na) / nb;
}

namespace {

uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

uint64_t rotl(uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
}

}  // namespace

Rng::Rng(uint64_t seed) : seed_(seed) {
    uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = 1.0 - next_double();  // (0, 1], keeps log finite
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
}

uint64_t mix_seed(uint64_t base, uint64_t a, uint64_t b) {
    uint64_t x = base;
    (void)splitmix64(x);
    x ^= a * 0x9E3779B97F4A7C15ull;
    (void)splitmix64(x);
    x ^= b * 0xD1B54A32D192ED03ull;
    return splitmix64(x);
}

Vec gaussian_sample(Rng& rng, int n, double mean, double stddev) {
    if (stddev < 0.0) throw DomainError("gaussian_sample: negative stddev");
    Vec out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out[i] = mean + stddev * rng.next_normal();
    return out;
}

SgdState::SgdState(double learning_rate, double momentum, double l2, double decay)
    : lr_(learning_rate), momentum_(momentum), l2_(l2), decay_(decay) {}

size_t SgdState::add_param(size_t n) {
    velocity_.emplace_back(n, 0.0);
    return velocity_.size() - 1;
}

void SgdState::step(size_t idx, std::span<double> param, std::span<const double> grad) {
    if (idx >= velocity_.size()) throw ShapeError("sgd: unknown parameter index");
    auto& vel = velocity_[idx];
    if (vel.size() != param.size() || param.size() != grad.size())
        throw ShapeError("sgd: parameter/gradient/velocity size mismatch");
    for (size_t i = 0; i < param.size(); ++i) {
        vel[i] = momentum_ * vel[i] + (grad[i] - l2_ * param[i]);
        param[i] += lr_ * vel[i];
    }
}

void SgdState::end_epoch() {
    lr_ *= decay_;
}

std::span<const double> SgdState::velocity(size_t idx) const {
    if (idx >= velocity_.size()) throw ShapeError("sgd: unknown parameter index");
    return velocity_[idx];
}

Mat sgd_step(const Mat& param, const Mat& grad, SgdState& state) {
    if (!param.same_shape(grad)) throw ShapeError("sgd_step: shape mismatch");
    Mat out = param;
    state.step(0, out.data, grad.data);
    return out;
}

}  // namespace poec
