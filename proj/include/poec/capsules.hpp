#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "poec/numerics.hpp"

namespace poec {

// Ordered collection of vector-valued capsules, all of one dimension.
// A layer is "squashed" when every capsule norm is < 1.
struct CapsuleLayer {
    int count = 0;
    int dim = 0;
    std::vector<double> data;  // count*dim, capsule i at [i*dim, (i+1)*dim)

    CapsuleLayer() = default;
    CapsuleLayer(int count_, int dim_)
        : count(count_), dim(dim_), data(static_cast<size_t>(count_) * dim_, 0.0) {}

    std::span<double> cap(int i) {
        return {data.data() + static_cast<size_t>(i) * dim, static_cast<size_t>(dim)};
    }
    std::span<const double> cap(int i) const {
        return {data.data() + static_cast<size_t>(i) * dim, static_cast<size_t>(dim)};
    }
    void set_cap(int i, std::span<const double> v);
};

// Grid of prediction matrices: n_in senders of dimension d_in, n_out
// receivers of dimension d_out, one d_out x d_in matrix per (sender,
// receiver) pair.
struct PredictionWeights {
    int n_in = 0, n_out = 0, d_in = 0, d_out = 0;
    std::vector<double> w;  // [i][j][d_out][d_in]

    PredictionWeights() = default;
    PredictionWeights(int n_in_, int n_out_, int d_in_, int d_out_)
        : n_in(n_in_), n_out(n_out_), d_in(d_in_), d_out(d_out_),
          w(static_cast<size_t>(n_in_) * n_out_ * d_out_ * d_in_, 0.0) {}

    size_t mat_size() const { return static_cast<size_t>(d_out) * d_in; }
    std::span<double> mat(int i, int j) {
        return {w.data() + (static_cast<size_t>(i) * n_out + j) * mat_size(), mat_size()};
    }
    std::span<const double> mat(int i, int j) const {
        return {w.data() + (static_cast<size_t>(i) * n_out + j) * mat_size(), mat_size()};
    }

    static PredictionWeights random(int n_in, int n_out, int d_in, int d_out,
                                    Rng& rng, double stddev);
};

// Routing coefficients and their pre-normalization logits.  Coefficients are
// normalized over the sender index: sum_i coeffs[i][j] == 1 for every j.
struct RoutingState {
    int n_in = 0, n_out = 0, n_iters = 0;
    std::vector<double> logits;  // [i][j]
    std::vector<double> coeffs;  // [i][j]

    RoutingState() = default;
    RoutingState(int n_in_, int n_out_, int n_iters_)
        : n_in(n_in_), n_out(n_out_), n_iters(n_iters_),
          logits(static_cast<size_t>(n_in_) * n_out_, 0.0),
          coeffs(static_cast<size_t>(n_in_) * n_out_, 0.0) {}

    double coeff(int i, int j) const { return coeffs[static_cast<size_t>(i) * n_out + j]; }
};

// Binary on/off configuration of the receiver capsules.
struct FiringVector {
    std::vector<uint8_t> bits;

    // bit j of mask = capsule j
    static FiringVector from_mask(uint32_t mask, int n);
    uint32_t to_mask() const;
};

// squash(z) = (|z|^2/(1+|z|^2)) * z/|z|; squash(0) = 0.  Output norm is in
// [0, 1) and strictly increasing in |z|; orientation is preserved.
Vec squash(std::span<const double> z);

// Exact inverse of squash on the open unit ball: |x| must be < 1 (DomainError
// otherwise); unsquash(0) = 0.
Vec unsquash(std::span<const double> x);

// sigma(log |z|^2), which equals |squash(z)|; 0 for z = 0.
double squash_magnitude_as_sigmoid(std::span<const double> z);

CapsuleLayer squash_layer(const CapsuleLayer& z);

struct RouteResult {
    RoutingState state;
    CapsuleLayer pre_activations;  // z_j from the final iteration
};

// Routing by agreement with cosine agreement.  Logits start at zero; each
// iteration normalizes them over senders (softmax per receiver), collects
// z_j = sum_i c_ij W_ij x_i, and adds cos(W_ij x_i, z_j) to the logits.
// Squashing happens outside this loop.  A zero-norm vector on either side of
// a cosine contributes 0.
RouteResult route(const CapsuleLayer& x, const PredictionWeights& w, int n_iters);

// z_rec_i = sum_j c_ij W_ij^T x_out_j, with the same coefficients as the
// forward pass.
CapsuleLayer route_reverse(const CapsuleLayer& x_out, const PredictionWeights& w,
                           const RoutingState& c);

// z_j = sum_i c_ij W_ij x_i for all receivers.
CapsuleLayer collect_preactivations(const CapsuleLayer& x, const PredictionWeights& w,
                                    const RoutingState& c);

// E = -sum_j log(|z_j|^2) * firing_j.  A firing receiver with |z_j| below
// 1e-300 raises SingularEnergyError.
double energy(const CapsuleLayer& x, const FiringVector& firing,
              const PredictionWeights& w, const RoutingState& c);

// |z_j|^2 / (1 + |z_j|^2); equals |squash(z_j)| and the two-term Boltzmann
// ratio exp(-E_on)/(exp(-E_on)+exp(-E_off)).
double conditional_firing_prob(const CapsuleLayer& x, const PredictionWeights& w,
                               const RoutingState& c, int j);

// prod_j (1 + |z_j|^2), accumulated in log space.
double unnormalized_marginal(const CapsuleLayer& x, const PredictionWeights& w,
                             const RoutingState& c);
double log_unnormalized_marginal(const CapsuleLayer& x, const PredictionWeights& w,
                                 const RoutingState& c);

// Normalized table of exp(-E) over all 2^J firing vectors, indexed by the
// FiringVector bitmask (bit j = capsule j).  Refuses J > 12.
std::vector<double> brute_force_joint(const CapsuleLayer& x, const PredictionWeights& w,
                                      const RoutingState& c);

}  // namespace poec
