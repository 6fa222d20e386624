#pragma once

#include <functional>
#include <span>
#include <vector>

#include "poec/capsules.hpp"
#include "poec/config.hpp"
#include "poec/numerics.hpp"

namespace poec {

struct EncoderModel {
    PredictionWeights w;  // senders = input capsules, receivers = hidden capsules
};

struct DecoderModel {
    PredictionWeights u;  // senders = hidden capsules, receivers = input capsules
};

// Running mean orientation of each hidden capsule while it was active during
// training, kept unit-norm, plus how many samples contributed.
struct OrientationStats {
    int n_caps = 0, dim = 0;
    std::vector<double> dirs;  // n_caps*dim, unit vectors (zero until first update)
    std::vector<uint64_t> counts;

    OrientationStats() = default;
    OrientationStats(int n_caps_, int dim_)
        : n_caps(n_caps_), dim(dim_),
          dirs(static_cast<size_t>(n_caps_) * dim_, 0.0), counts(n_caps_, 0) {}

    std::span<const double> dir(int j) const {
        return {dirs.data() + static_cast<size_t>(j) * dim, static_cast<size_t>(dim)};
    }
    bool trained(int j) const { return counts[j] > 0; }
    void update(int j, std::span<const double> unit_dir);
};

// Per-pair weight update, same layout as PredictionWeights.
struct GradUpdate {
    int n_in = 0, n_out = 0, d_in = 0, d_out = 0;
    std::vector<double> dw;

    GradUpdate() = default;
    GradUpdate(int n_in_, int n_out_, int d_in_, int d_out_)
        : n_in(n_in_), n_out(n_out_), d_in(d_in_), d_out(d_out_),
          dw(static_cast<size_t>(n_in_) * n_out_ * d_out_ * d_in_, 0.0) {}

    size_t mat_size() const { return static_cast<size_t>(d_out) * d_in; }
    std::span<const double> mat(int i, int j) const {
        return {dw.data() + (static_cast<size_t>(i) * n_out + j) * mat_size(), mat_size()};
    }
    void zero() { std::fill(dw.begin(), dw.end(), 0.0); }
};

struct PositivePhase {
    RoutingState routing;          // the c_ij, reused by every later step
    CapsuleLayer pre_activations;  // z_j
    CapsuleLayer activations;      // squash(z_j)
};

// Route the data forward and squash.
PositivePhase positive_phase(const CapsuleLayer& x, const PredictionWeights& w,
                             int routing_iters);

struct NegativePhase {
    CapsuleLayer reconstructed;      // squash of sum_j c_ij W_ij^T activations_j
    CapsuleLayer re_pre_activations; // sum_i c_ij W_ij reconstructed_i
    CapsuleLayer re_activations;     // squash of the line above
};

// One reconstruction pass with the routing coefficients frozen from the
// positive phase; no re-routing happens here.
NegativePhase negative_phase(const RoutingState& routing, const CapsuleLayer& activations,
                             const PredictionWeights& w);

// dW_ij = 2 c_ij ( outer(z_j, x_i)/(1+|z_j|^2)
//                  - outer(z_rec_j, x_rec_i)/(1+|z_rec_j|^2) ).
// Exactly zero when the reconstruction equals the data bit for bit.
GradUpdate cd_gradient(const CapsuleLayer& x, const CapsuleLayer& z,
                       const CapsuleLayer& x_rec, const CapsuleLayer& z_rec,
                       const RoutingState& routing);

using EpochCallback = std::function<void(int epoch, double metric)>;

struct EncoderTrainResult {
    EncoderModel model;
    OrientationStats stats;
};

// Contrastive training of the forward prediction grid: per sample runs the
// positive phase, one frozen-coefficient reconstruction, the gradient above,
// and an SGD step on the batch average.  Orientation statistics accumulate
// from hidden activations with norm above 0.5.  Deterministic for a fixed
// seed regardless of thread count (per-sample gradients are reduced in index
// order).
EncoderTrainResult train_encoder(std::span<const CapsuleLayer> data, int n_out,
                                 int d_out, const TrainConfig& cfg,
                                 const EpochCallback& cb = {});

// Trains the reverse grid with the encoder frozen.  Data pairs are the
// pre-squash input capsules and the encoder's hidden activations; the model
// side routes the hidden activations through the reverse grid (coefficients
// frozen from that pass) and reconstructs both layers.
DecoderModel train_decoder(std::span<const CapsuleLayer> data, const EncoderModel& encoder,
                           const TrainConfig& cfg, const EpochCallback& cb = {});

// Draws N(0,1)^dim for one hidden capsule (zeros elsewhere), optionally flips
// it into the hemisphere of the capsule's stored mean direction, squashes,
// routes through the decoder grid and squashes the result.  The returned
// layer feeds capsules_to_volume.  sampled_out, when given, receives the
// (possibly flipped) raw Gaussian draw.
CapsuleLayer generate(const DecoderModel& decoder, const OrientationStats& stats,
                      Rng& rng, int capsule_index, bool restricted,
                      int routing_iters = 3, Vec* sampled_out = nullptr);

struct GradcheckReport {
    double max_rel_error = 0.0;
    int worst_i = -1, worst_j = -1, worst_row = -1, worst_col = -1;
    double worst_analytic = 0.0, worst_numeric = 0.0;
    size_t entries = 0;
};

// Central finite differences of log prod_j (1+|z_j|^2) in every weight entry,
// with the routing coefficients frozen at their routed values, compared
// against the analytic data term of cd_gradient.  Per-entry relative error
// uses max(|analytic|, |numeric|, 1e-3) as denominator so that near-zero
// entries are measured against a fixed scale floor.  Instances where some
// |z_j| < 1e-8 are rejected (log singularity).
GradcheckReport gradcheck(const PredictionWeights& w, const CapsuleLayer& x,
                          double eps, int routing_iters = 3);

// Mean over samples of the best hidden capsule's squashed magnitude.
double mean_best_activation(std::span<const CapsuleLayer> data,
                            const PredictionWeights& w, int routing_iters);

// Mean over samples and input capsules of 1 - cos(pre-squash data capsule,
// decoder reconstruction); pairs with a zero norm on either side are skipped.
double mean_reconstruction_angle_error(std::span<const CapsuleLayer> data,
                                       const EncoderModel& encoder,
                                       const DecoderModel& decoder, int routing_iters);

}  // namespace poec
