#include "poec/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "poec/error.hpp"
#include "poec/kernels.hpp"

namespace poec {

void TrainConfig::validate() const {
    if (epochs < 1) throw DomainError("config: epochs must be >= 1");
    if (batch_size < 1) throw DomainError("config: batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw DomainError("config: learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw DomainError("config: momentum must be in [0, 1)");
    if (!(l2 >= 0.0)) throw DomainError("config: l2 must be >= 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0))
        throw DomainError("config: lr_decay must be in (0, 1]");
    if (routing_iters < 1) throw DomainError("config: routing_iters must be >= 1");
    if (!(init_std > 0.0)) throw DomainError("config: init_std must be > 0");
}

void OrientationStats::update(int j, std::span<const double> unit_dir) {
    if (static_cast<int>(unit_dir.size()) != dim)
        throw ShapeError("orientation stats: direction dimension mismatch");
    double* d = dirs.data() + static_cast<size_t>(j) * dim;
    Vec sum(static_cast<size_t>(dim));
    const double n = static_cast<double>(counts[j]);
    for (int k = 0; k < dim; ++k) sum[k] = n * d[k] + unit_dir[k];
    const double sn = norm(sum);
    if (sn > 0.0)
        for (int k = 0; k < dim; ++k) d[k] = sum[k] / sn;
    counts[j] += 1;
}

PositivePhase positive_phase(const CapsuleLayer& x, const PredictionWeights& w,
                             int routing_iters) {
    RouteResult r = route(x, w, routing_iters);
    CapsuleLayer act = squash_layer(r.pre_activations);
    return {std::move(r.state), std::move(r.pre_activations), std::move(act)};
}

NegativePhase negative_phase(const RoutingState& routing, const CapsuleLayer& activations,
                             const PredictionWeights& w) {
    CapsuleLayer z_back = route_reverse(activations, w, routing);
    CapsuleLayer x_rec = squash_layer(z_back);
    CapsuleLayer z_re = collect_preactivations(x_rec, w, routing);
    CapsuleLayer x_re = squash_layer(z_re);
    return {std::move(x_rec), std::move(z_re), std::move(x_re)};
}

GradUpdate cd_gradient(const CapsuleLayer& x, const CapsuleLayer& z,
                       const CapsuleLayer& x_rec, const CapsuleLayer& z_rec,
                       const RoutingState& routing) {
    if (x.count != routing.n_in || z.count != routing.n_out ||
        x_rec.count != x.count || x_rec.dim != x.dim || z_rec.count != z.count ||
        z_rec.dim != z.dim)
        throw ShapeError("cd_gradient: inconsistent layer shapes");
    GradUpdate g(x.count, z.count, x.dim, z.dim);
    kern::cd_outer(x.data.data(), z.data.data(), x_rec.data.data(), z_rec.data.data(),
                   routing.coeffs.data(), g.n_in, g.n_out, g.d_in, g.d_out, g.dw.data());
    return g;
}

namespace {

void check_dataset(std::span<const CapsuleLayer> data, const char* who) {
    if (data.empty()) throw DomainError(std::string(who) + ": empty dataset");
    const int count = data[0].count, dim = data[0].dim;
    for (const auto& layer : data) {
        if (layer.count != count || layer.dim != dim)
            throw ShapeError(std::string(who) + ": mixed capsule layer shapes");
        for (int i = 0; i < layer.count; ++i) {
            const double n = norm(layer.cap(i));
            if (!std::isfinite(n) || n >= 1.0)
                throw DomainError(std::string(who) +
                                  ": dataset layers must be squashed (norms < 1)");
        }
    }
}

constexpr double kActivityThreshold = 0.5;
constexpr int kMaxGradSlots = 16;

}  // namespace

EncoderTrainResult train_encoder(std::span<const CapsuleLayer> data, int n_out,
                                 int d_out, const TrainConfig& cfg,
                                 const EpochCallback& cb) {
    cfg.validate();
    check_dataset(data, "train_encoder");
    if (n_out < 1 || d_out < 1) throw DomainError("train_encoder: bad output shape");

    set_max_threads(cfg.threads);
    const int n_in = data[0].count, d_in = data[0].dim;

    Rng rng(cfg.seed);
    EncoderModel model{PredictionWeights::random(n_in, n_out, d_in, d_out, rng,
                                                 cfg.init_std)};
    OrientationStats stats(n_out, d_out);

    SgdState sgd(cfg.learning_rate, cfg.momentum, cfg.l2, cfg.lr_decay);
    const size_t pw = sgd.add_param(model.w.w.size());

    const int n_slots = std::min({std::max(1, max_threads()), cfg.batch_size,
                                  kMaxGradSlots});
    std::vector<GradUpdate> slot_grad(n_slots, GradUpdate(n_in, n_out, d_in, d_out));
    std::vector<CapsuleLayer> slot_act(n_slots, CapsuleLayer(n_out, d_out));
    GradUpdate batch_grad(n_in, n_out, d_in, d_out);

    const size_t n = data.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_mean_act = 0.0;
        for (size_t start = 0; start < n; start += cfg.batch_size) {
            const size_t end = std::min(n, start + cfg.batch_size);
            batch_grad.zero();
            // Per-sample work runs in parallel in chunks; the reduction below
            // is serial in sample order, so results do not depend on the
            // thread count.
            for (size_t chunk = start; chunk < end; chunk += n_slots) {
                const int in_chunk = static_cast<int>(std::min<size_t>(n_slots, end - chunk));
#pragma omp parallel for schedule(static)
                for (int t = 0; t < in_chunk; ++t) {
                    const CapsuleLayer& x = data[chunk + t];
                    PositivePhase pos = positive_phase(x, model.w, cfg.routing_iters);
                    NegativePhase neg = negative_phase(pos.routing, pos.activations, model.w);
                    slot_grad[t] = cd_gradient(x, pos.pre_activations, neg.reconstructed,
                                               neg.re_pre_activations, pos.routing);
                    slot_act[t] = std::move(pos.activations);
                }
                for (int t = 0; t < in_chunk; ++t) {
                    const auto& g = slot_grad[t].dw;
                    for (size_t e = 0; e < g.size(); ++e) batch_grad.dw[e] += g[e];
                    for (int j = 0; j < n_out; ++j) {
                        const auto cap = slot_act[t].cap(j);
                        const double m = norm(cap);
                        epoch_mean_act += m;
                        if (m > kActivityThreshold) {
                            Vec unit(cap.begin(), cap.end());
                            for (auto& v : unit) v /= m;
                            stats.update(j, unit);
                        }
                    }
                }
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (auto& e : batch_grad.dw) e *= inv;
            for (const double e : batch_grad.dw)
                if (!std::isfinite(e))
                    throw NumericError("train_encoder: non-finite gradient at epoch " +
                                       std::to_string(epoch) + ", batch starting at " +
                                       std::to_string(start));
            sgd.step(pw, model.w.w, batch_grad.dw);
        }
        sgd.end_epoch();
        if (cb) cb(epoch, epoch_mean_act / (static_cast<double>(n) * n_out));
    }
    return {std::move(model), std::move(stats)};
}

namespace {

struct DecoderSample {
    GradUpdate grad;
    double angle_err_sum = 0.0;
    size_t angle_pairs = 0;
};

// One decoder CD step for one sample.  The hidden activations x_out act as
// senders through the reverse grid u; the data targets are the pre-squash
// input capsules.  Also reports the sample's reconstruction angle error so
// the epoch metric costs nothing extra.
DecoderSample decoder_sample_grad(const CapsuleLayer& x, const EncoderModel& encoder,
                                  const PredictionWeights& u, int routing_iters) {
    PositivePhase pos = positive_phase(x, encoder.w, routing_iters);

    // data pre-activations: the pre-squash values behind the input layer
    CapsuleLayer z_data(x.count, x.dim);
    for (int i = 0; i < x.count; ++i) z_data.set_cap(i, unsquash(x.cap(i)));

    // model: route the hidden activations through u, then reconstruct the
    // hidden layer with the same coefficients
    RouteResult fwd = route(pos.activations, u, routing_iters);
    CapsuleLayer x_rec = squash_layer(fwd.pre_activations);
    CapsuleLayer hidden_rec_pre = route_reverse(x_rec, u, fwd.state);
    CapsuleLayer hidden_rec = squash_layer(hidden_rec_pre);

    DecoderSample out;
    // senders: data = pos.activations, model = hidden_rec;
    // receivers: data = z_data, model = fwd.pre_activations
    out.grad = GradUpdate(u.n_in, u.n_out, u.d_in, u.d_out);
    kern::cd_outer(pos.activations.data.data(), z_data.data.data(),
                   hidden_rec.data.data(), fwd.pre_activations.data.data(),
                   fwd.state.coeffs.data(), u.n_in, u.n_out, u.d_in, u.d_out,
                   out.grad.dw.data());
    for (int i = 0; i < x.count; ++i) {
        const auto z_rec = fwd.pre_activations.cap(i);
        if (norm(z_data.cap(i)) == 0.0 || norm(z_rec) == 0.0) continue;
        out.angle_err_sum += 1.0 - cosine(z_data.cap(i), z_rec);
        ++out.angle_pairs;
    }
    return out;
}

}  // namespace

DecoderModel train_decoder(std::span<const CapsuleLayer> data, const EncoderModel& encoder,
                           const TrainConfig& cfg, const EpochCallback& cb) {
    cfg.validate();
    check_dataset(data, "train_decoder");
    if (data[0].count != encoder.w.n_in || data[0].dim != encoder.w.d_in)
        throw ShapeError("train_decoder: dataset does not match encoder input");

    set_max_threads(cfg.threads);
    const int n_hidden = encoder.w.n_out, d_hidden = encoder.w.d_out;
    const int n_low = encoder.w.n_in, d_low = encoder.w.d_in;

    Rng rng(cfg.seed);
    DecoderModel model{PredictionWeights::random(n_hidden, n_low, d_hidden, d_low, rng,
                                                 cfg.init_std)};

    SgdState sgd(cfg.learning_rate, cfg.momentum, cfg.l2, cfg.lr_decay);
    const size_t pu = sgd.add_param(model.u.w.size());

    const int n_slots = std::min({std::max(1, max_threads()), cfg.batch_size,
                                  kMaxGradSlots});
    std::vector<DecoderSample> slots(n_slots);
    GradUpdate batch_grad(n_hidden, n_low, d_hidden, d_low);

    const size_t n = data.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_err = 0.0;
        size_t epoch_pairs = 0;
        for (size_t start = 0; start < n; start += cfg.batch_size) {
            const size_t end = std::min(n, start + cfg.batch_size);
            batch_grad.zero();
            for (size_t chunk = start; chunk < end; chunk += n_slots) {
                const int in_chunk = static_cast<int>(std::min<size_t>(n_slots, end - chunk));
#pragma omp parallel for schedule(static)
                for (int t = 0; t < in_chunk; ++t)
                    slots[t] = decoder_sample_grad(data[chunk + t], encoder, model.u,
                                                   cfg.routing_iters);
                for (int t = 0; t < in_chunk; ++t) {
                    const auto& g = slots[t].grad.dw;
                    for (size_t e = 0; e < g.size(); ++e) batch_grad.dw[e] += g[e];
                    epoch_err += slots[t].angle_err_sum;
                    epoch_pairs += slots[t].angle_pairs;
                }
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (auto& e : batch_grad.dw) e *= inv;
            for (const double e : batch_grad.dw)
                if (!std::isfinite(e))
                    throw NumericError("train_decoder: non-finite gradient at epoch " +
                                       std::to_string(epoch));
            sgd.step(pu, model.u.w, batch_grad.dw);
        }
        sgd.end_epoch();
        if (cb) cb(epoch, epoch_pairs ? epoch_err / static_cast<double>(epoch_pairs) : 0.0);
    }
    return model;
}

CapsuleLayer generate(const DecoderModel& decoder, const OrientationStats& stats,
                      Rng& rng, int capsule_index, bool restricted,
                      int routing_iters, Vec* sampled_out) {
    const PredictionWeights& u = decoder.u;
    if (capsule_index < 0 || capsule_index >= u.n_in)
        throw ShapeError("generate: capsule index out of range");

    Vec g = gaussian_sample(rng, u.d_in, 0.0, 1.0);
    if (restricted) {
        if (stats.n_caps != u.n_in || stats.dim != u.d_in || !stats.trained(capsule_index))
            throw DomainError("generate: restricted sampling needs orientation stats "
                              "for capsule " + std::to_string(capsule_index));
        if (dot(g, stats.dir(capsule_index)) < 0.0)
            for (auto& v : g) v = -v;
    }
    if (sampled_out) *sampled_out = g;

    CapsuleLayer in(u.n_in, u.d_in);
    in.set_cap(capsule_index, squash(g));

    RouteResult r = route(in, u, routing_iters);
    return squash_layer(r.pre_activations);
}

GradcheckReport gradcheck(const PredictionWeights& w, const CapsuleLayer& x,
                          double eps, int routing_iters) {
    if (!(eps > 0.0)) throw DomainError("gradcheck: eps must be > 0");
    RouteResult routed = route(x, w, routing_iters);
    for (int j = 0; j < w.n_out; ++j)
        if (norm(routed.pre_activations.cap(j)) < 1e-8)
            throw SingularEnergyError("gradcheck: capsule " + std::to_string(j) +
                                      " has (near-)zero pre-activation; the log "
                                      "marginal is singular there");

    // Analytic data term = cd_gradient against a zero reconstruction.
    const CapsuleLayer zero_low(x.count, x.dim);
    const CapsuleLayer zero_high(w.n_out, w.d_out);
    const GradUpdate analytic =
        cd_gradient(x, routed.pre_activations, zero_low, zero_high, routed.state);

    PredictionWeights probe = w;
    GradcheckReport rep;
    rep.entries = probe.w.size();
    for (size_t e = 0; e < probe.w.size(); ++e) {
        const double saved = probe.w[e];
        probe.w[e] = saved + eps;
        const double f_plus = log_unnormalized_marginal(x, probe, routed.state);
        probe.w[e] = saved - eps;
        const double f_minus = log_unnormalized_marginal(x, probe, routed.state);
        probe.w[e] = saved;

        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        const double an = analytic.dw[e];
        const double denom = std::max({std::abs(numeric), std::abs(an), 1e-3});
        const double rel = std::abs(numeric - an) / denom;
        if (rel > rep.max_rel_error) {
            rep.max_rel_error = rel;
            const size_t mat = static_cast<size_t>(w.d_out) * w.d_in;
            const size_t pair = e / mat;
            rep.worst_i = static_cast<int>(pair / w.n_out);
            rep.worst_j = static_cast<int>(pair % w.n_out);
            rep.worst_row = static_cast<int>((e % mat) / w.d_in);
            rep.worst_col = static_cast<int>(e % w.d_in);
            rep.worst_analytic = an;
            rep.worst_numeric = numeric;
        }
    }
    return rep;
}

double mean_best_activation(std::span<const CapsuleLayer> data,
                            const PredictionWeights& w, int routing_iters) {
    if (data.empty()) throw DomainError("mean_best_activation: empty dataset");
    double total = 0.0;
    for (const auto& x : data) {
        PositivePhase pos = positive_phase(x, w, routing_iters);
        double best = 0.0;
        for (int j = 0; j < w.n_out; ++j)
            best = std::max(best, norm(pos.activations.cap(j)));
        total += best;
    }
    return total / static_cast<double>(data.size());
}

double mean_reconstruction_angle_error(std::span<const CapsuleLayer> data,
                                       const EncoderModel& encoder,
                                       const DecoderModel& decoder, int routing_iters) {
    if (data.empty()) throw DomainError("mean_reconstruction_angle_error: empty dataset");
    double total = 0.0;
    size_t pairs = 0;
    for (const auto& x : data) {
        PositivePhase pos = positive_phase(x, encoder.w, routing_iters);
        RouteResult fwd = route(pos.activations, decoder.u, routing_iters);
        for (int i = 0; i < x.count; ++i) {
            const Vec z_data = unsquash(x.cap(i));
            const auto z_rec = fwd.pre_activations.cap(i);
            if (norm(z_data) == 0.0 || norm(z_rec) == 0.0) continue;
            total += 1.0 - cosine(z_data, z_rec);
            ++pairs;
        }
    }
    if (pairs == 0) return 0.0;
    return total / static_cast<double>(pairs);
}

}  // namespace poec
