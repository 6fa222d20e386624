#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "poec/error.hpp"

namespace poec {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

    double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    static Mat identity(int n);
};

Vec matvec(const Mat& m, const Vec& v);
// transpose(m) * v without materializing the transpose.
Vec matvec_t(const Mat& m, const Vec& v);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);
// Cosine similarity; zero if either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

// xoshiro256++ seeded through splitmix64.  The integer stream is defined
// purely by 64-bit integer arithmetic, so a given seed reproduces the same
// sequence on any platform.  Normal deviates use the Box-Muller transform
// (one sin/cos pair cached), so they additionally depend on libm.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double next_double();
    // Standard normal via Box-Muller.
    double next_normal();

    uint64_t seed() const { return seed_; }

private:
    uint64_t s_[4];
    uint64_t seed_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Convenience for chained/derived seeds (per-sample dropout masks etc.).
uint64_t mix_seed(uint64_t base, uint64_t a, uint64_t b = 0);

// n i.i.d. draws from N(mean, stddev^2); stddev == 0 yields the mean exactly.
Vec gaussian_sample(Rng& rng, int n, double mean, double stddev);

// SGD with momentum, L2 pull toward zero and per-epoch learning-rate decay.
// The step ASCENDS the supplied gradient:
//   velocity <- momentum*velocity + (grad - l2*param)
//   param    <- param + learning_rate*velocity
// One velocity buffer is kept per registered parameter.
class SgdState {
public:
    SgdState(double learning_rate, double momentum, double l2, double decay);

    // Registers a parameter of n scalars; returns its index.
    size_t add_param(size_t n);

    void step(size_t idx, std::span<double> param, std::span<const double> grad);
    // learning_rate *= decay
    void end_epoch();

    double learning_rate() const { return lr_; }
    double momentum() const { return momentum_; }
    double l2() const { return l2_; }
    double decay() const { return decay_; }
    std::span<const double> velocity(size_t idx) const;

private:
    double lr_, momentum_, l2_, decay_;
    std::vector<std::vector<double>> velocity_;
};

// Single-matrix convenience wrapper around SgdState::step.  The state must
// hold exactly one parameter registered with the matrix's element count.
Mat sgd_step(const Mat& param, const Mat& grad, SgdState& state);

}  // namespace poec
