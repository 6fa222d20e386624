#include <doctest.h>

#include <cmath>

#include "poec/capsules.hpp"
#include "test_support.hpp"

using namespace poec;

namespace {

double rel_diff(double a, double b) {
    const double m = std::max(std::abs(a), std::abs(b));
    return m == 0.0 ? 0.0 : std::abs(a - b) / m;
}

// Uniform coefficients over senders; valid RoutingState for hand-built cases.
RoutingState uniform_routing(int n_in, int n_out) {
    RoutingState st(n_in, n_out, 1);
    for (auto& c : st.coeffs) c = 1.0 / n_in;
    return st;
}

}  // namespace

TEST_CASE("squash unit-norm input halves") {
    const Vec out = squash(Vec{1.0, 0.0});
    CHECK(out[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out[1] == 0.0);
}

TEST_CASE("squash of zero is zero") {
    const Vec out = squash(Vec{0.0, 0.0, 0.0});
    for (double v : out) CHECK(v == 0.0);
    CHECK(unsquash(Vec{0.0, 0.0}) == Vec{0.0, 0.0});
    CHECK(squash_magnitude_as_sigmoid(Vec{0.0, 0.0}) == 0.0);
}

TEST_CASE("squash (3,4) hand value") {
    const Vec out = squash(Vec{3.0, 4.0});
    CHECK(out[0] == doctest::Approx(15.0 / 26.0).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(20.0 / 26.0).epsilon(1e-14));
    CHECK(norm(out) == doctest::Approx(25.0 / 26.0).epsilon(1e-14));
}

TEST_CASE("unsquash hand values") {
    // norm 0.5 -> output norm 1
    const Vec half = unsquash(Vec{0.5, 0.0});
    CHECK(norm(half) == doctest::Approx(1.0).epsilon(1e-14));

    // norm 25/26 along (0.6, 0.8) -> (3, 4)
    const Vec x{(25.0 / 26.0) * 0.6, (25.0 / 26.0) * 0.8};
    const Vec out = unsquash(x);
    CHECK(out[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(4.0).epsilon(1e-12));

    CHECK_THROWS_AS(unsquash(Vec{1.0, 0.0}), DomainError);
    CHECK_THROWS_AS(unsquash(Vec{0.9, 0.9}), DomainError);
}

TEST_CASE("squash/unsquash are inverse across magnitudes") {
    Rng rng(31);
    for (int dim : {2, 8, 16}) {
        for (int trial = 0; trial < 300; ++trial) {
            // log-uniform norms across (1e-6, 1e3)
            const double target = std::pow(10.0, -6.0 + 9.0 * rng.next_double());
            Vec z = gaussian_sample(rng, dim, 0.0, 1.0);
            const double n = norm(z);
            if (n == 0.0) continue;
            for (auto& v : z) v *= target / n;

            const Vec x = squash(z);
            CHECK(norm(x) < 1.0);
            const Vec back = unsquash(x);
            for (int k = 0; k < dim; ++k)
                CHECK(std::abs(back[k] - z[k]) <= 1e-9 * std::max(1e-300, std::abs(z[k])));

            const Vec fwd = squash(back);
            for (int k = 0; k < dim; ++k)
                CHECK(std::abs(fwd[k] - x[k]) <= 1e-9 * std::max(1e-300, std::abs(x[k])));
        }
    }
}

TEST_CASE("squash preserves orientation and is norm-monotone") {
    Rng rng(32);
    double prev_norm = -1.0;
    Vec dir = gaussian_sample(rng, 5, 0.0, 1.0);
    const double dn = norm(dir);
    for (auto& v : dir) v /= dn;
    for (double mag = 1e-4; mag < 1e4; mag *= 3.0) {
        Vec z(dir);
        for (auto& v : z) v *= mag;
        const Vec s = squash(z);
        CHECK(cosine(z, s) == doctest::Approx(1.0).epsilon(1e-12));
        const double sn = norm(s);
        CHECK(sn < 1.0);
        CHECK(sn > prev_norm);
        prev_norm = sn;
    }
}

TEST_CASE("sigmoid identity for the squash magnitude") {
    CHECK(squash_magnitude_as_sigmoid(Vec{1.0, 0.0}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(squash_magnitude_as_sigmoid(Vec{3.0, 4.0}) ==
          doctest::Approx(25.0 / 26.0).epsilon(1e-13));

    Rng rng(33);
    double prev = 0.0;
    for (double mag = 1e-5; mag < 1e5; mag *= 2.5) {
        Vec z = gaussian_sample(rng, 8, 0.0, 1.0);
        const double n = norm(z);
        for (auto& v : z) v *= mag / n;
        const double sig = squash_magnitude_as_sigmoid(z);
        CHECK(rel_diff(sig, norm(squash(z))) <= 1e-12);
        CHECK(sig > prev);  // monotone toward 1
        prev = sig;
    }
    CHECK(prev < 1.0);
}

TEST_CASE("route with one sender pins coefficients at 1") {
    Rng rng(41);
    PredictionWeights w = PredictionWeights::random(1, 3, 4, 2, rng, 0.5);
    CapsuleLayer x = testutil::random_squashed_layer(1, 4, rng);
    for (int iters : {1, 3, 5}) {
        const RouteResult r = route(x, w, iters);
        for (int j = 0; j < 3; ++j) CHECK(r.state.coeff(0, j) == 1.0);
    }
}

TEST_CASE("route single iteration gives uniform mean of predictions") {
    Rng rng(42);
    const int I = 5, J = 3, d_in = 4, d_out = 2;
    PredictionWeights w = PredictionWeights::random(I, J, d_in, d_out, rng, 0.5);
    CapsuleLayer x = testutil::random_squashed_layer(I, d_in, rng);

    const RouteResult r = route(x, w, 1);
    for (int i = 0; i < I; ++i)
        for (int j = 0; j < J; ++j)
            CHECK(r.state.coeff(i, j) == doctest::Approx(1.0 / I).epsilon(1e-15));

    // z_j must be the plain mean of the per-sender predictions
    for (int j = 0; j < J; ++j) {
        Vec mean(d_out, 0.0);
        for (int i = 0; i < I; ++i) {
            Mat wm(d_out, d_in);
            const auto ws = w.mat(i, j);
            std::copy(ws.begin(), ws.end(), wm.data.begin());
            const Vec pred = matvec(wm, Vec(x.cap(i).begin(), x.cap(i).end()));
            for (int r2 = 0; r2 < d_out; ++r2) mean[r2] += pred[r2] / I;
        }
        for (int r2 = 0; r2 < d_out; ++r2)
            CHECK(r.pre_activations.cap(j)[r2] == doctest::Approx(mean[r2]).epsilon(1e-12));
    }
}

TEST_CASE("route keeps symmetric senders balanced") {
    // two senders producing the identical prediction for the single receiver
    const int I = 2, J = 1, d = 2;
    PredictionWeights w(I, J, d, d);
    // W_11 = W_21 = identity
    for (int i = 0; i < I; ++i) {
        auto m = w.mat(i, 0);
        m[0] = 1.0; m[3] = 1.0;
    }
    CapsuleLayer x(I, d);
    x.set_cap(0, Vec{1.0, 0.0});
    x.set_cap(1, Vec{1.0, 0.0});
    for (int iters : {1, 2, 5, 8}) {
        const RouteResult r = route(x, w, iters);
        CHECK(r.state.coeff(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(r.state.coeff(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("route normalization and positivity on random instances") {
    Rng rng(43);
    for (int trial = 0; trial < 100; ++trial) {
        const int I = 2 + static_cast<int>(rng.next_u64() % 6);
        const int J = 1 + static_cast<int>(rng.next_u64() % 5);
        const int d_in = 2 + static_cast<int>(rng.next_u64() % 4);
        const int d_out = 2 + static_cast<int>(rng.next_u64() % 4);
        PredictionWeights w = PredictionWeights::random(I, J, d_in, d_out, rng, 0.8);
        CapsuleLayer x = testutil::random_squashed_layer(I, d_in, rng);
        const RouteResult r = route(x, w, 3);
        for (int j = 0; j < J; ++j) {
            double col = 0.0;
            for (int i = 0; i < I; ++i) {
                CHECK(r.state.coeff(i, j) >= 0.0);
                col += r.state.coeff(i, j);
            }
            CHECK(std::abs(col - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("cosine with a zero vector is the neutral element") {
    CHECK(cosine(Vec{0.0, 0.0}, Vec{1.0, 2.0}) == 0.0);
    CHECK(cosine(Vec{1.0, 2.0}, Vec{0.0, 0.0}) == 0.0);

    // a sender with all-zero prediction maps must not poison the routing
    Rng rng(50);
    PredictionWeights w = PredictionWeights::random(3, 2, 3, 2, rng, 0.7);
    for (auto v : {0, 1})
        for (double& e : w.mat(0, v)) e = 0.0;
    CapsuleLayer x = testutil::random_squashed_layer(3, 3, rng);
    const RouteResult r = route(x, w, 4);
    for (double c : r.state.coeffs) {
        CHECK(std::isfinite(c));
        CHECK(c >= 0.0);
    }
    for (int j = 0; j < 2; ++j) {
        double col = 0.0;
        for (int i = 0; i < 3; ++i) col += r.state.coeff(i, j);
        CHECK(col == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("route rejects bad arguments") {
    Rng rng(44);
    PredictionWeights w = PredictionWeights::random(3, 2, 4, 2, rng, 0.5);
    CapsuleLayer wrong(3, 5);
    CHECK_THROWS_AS(route(wrong, w, 3), ShapeError);
    CapsuleLayer x = testutil::random_squashed_layer(3, 4, rng);
    CHECK_THROWS_AS(route(x, w, 0), DomainError);
}

TEST_CASE("route_reverse identity transport") {
    PredictionWeights w(1, 1, 2, 2);
    auto m = w.mat(0, 0);
    m[0] = 1.0; m[3] = 1.0;
    RoutingState st = uniform_routing(1, 1);
    CapsuleLayer x_out(1, 2);
    x_out.set_cap(0, Vec{0.3, -0.4});
    const CapsuleLayer back = route_reverse(x_out, w, st);
    CHECK(back.cap(0)[0] == 0.3);
    CHECK(back.cap(0)[1] == -0.4);
}

TEST_CASE("route_reverse and conditional probability reject bad shapes") {
    Rng rng(51);
    PredictionWeights w = PredictionWeights::random(3, 2, 4, 2, rng, 0.5);
    CapsuleLayer x = testutil::random_squashed_layer(3, 4, rng);
    const RouteResult r = route(x, w, 2);
    CapsuleLayer wrong(2, 5);  // receiver count right, dimension wrong
    CHECK_THROWS_AS(route_reverse(wrong, w, r.state), ShapeError);
    CHECK_THROWS_AS(conditional_firing_prob(x, w, r.state, 2), ShapeError);
    CHECK_THROWS_AS(conditional_firing_prob(x, w, r.state, -1), ShapeError);
}

TEST_CASE("route_reverse of a zero layer is zero") {
    Rng rng(45);
    PredictionWeights w = PredictionWeights::random(4, 3, 3, 2, rng, 0.5);
    const RouteResult r = route(testutil::random_squashed_layer(4, 3, rng), w, 2);
    const CapsuleLayer zeros(3, 2);
    const CapsuleLayer back = route_reverse(zeros, w, r.state);
    for (double v : back.data) CHECK(v == 0.0);
}

TEST_CASE("route_reverse matches naive double-loop oracle") {
    Rng rng(46);
    const int I = 5, J = 4, d_in = 3, d_out = 2;
    PredictionWeights w = PredictionWeights::random(I, J, d_in, d_out, rng, 0.7);
    CapsuleLayer x = testutil::random_squashed_layer(I, d_in, rng);
    const RouteResult r = route(x, w, 3);
    CapsuleLayer x_out = testutil::random_squashed_layer(J, d_out, rng);

    const CapsuleLayer got = route_reverse(x_out, w, r.state);
    for (int i = 0; i < I; ++i)
        for (int c = 0; c < d_in; ++c) {
            double want = 0.0;
            for (int j = 0; j < J; ++j)
                for (int r2 = 0; r2 < d_out; ++r2)
                    want += r.state.coeff(i, j) * w.mat(i, j)[static_cast<size_t>(r2) * d_in + c] *
                            x_out.cap(j)[r2];
            CHECK(got.cap(i)[c] == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("energy hand values") {
    // single receiver with |z| controlled exactly
    PredictionWeights w(2, 1, 1, 1);
    w.mat(0, 0)[0] = 1.0;
    w.mat(1, 0)[0] = 1.0;
    CapsuleLayer x(2, 1);
    x.set_cap(0, Vec{5.0});
    x.set_cap(1, Vec{5.0});
    RoutingState st = uniform_routing(2, 1);  // z = 5

    CHECK(energy(x, FiringVector::from_mask(0, 1), w, st) == 0.0);
    CHECK(energy(x, FiringVector::from_mask(1, 1), w, st) ==
          doctest::Approx(-std::log(25.0)).epsilon(1e-14));

    // |z| = 1 -> energy 0 even when firing
    CapsuleLayer unit(2, 1);
    unit.set_cap(0, Vec{1.0});
    unit.set_cap(1, Vec{1.0});
    CHECK(energy(unit, FiringVector::from_mask(1, 1), w, st) ==
          doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("energy rejects firing capsule with zero pre-activation") {
    PredictionWeights w(1, 1, 2, 2);  // all-zero weights
    CapsuleLayer x(1, 2);
    x.set_cap(0, Vec{0.5, 0.0});
    RoutingState st = uniform_routing(1, 1);
    CHECK_THROWS_AS(energy(x, FiringVector::from_mask(1, 1), w, st), SingularEnergyError);
    CHECK(energy(x, FiringVector::from_mask(0, 1), w, st) == 0.0);
}

TEST_CASE("conditional firing probability hand values and Boltzmann ratio") {
    // z = 0 -> 0
    PredictionWeights wz(1, 1, 2, 2);
    CapsuleLayer x0(1, 2);
    x0.set_cap(0, Vec{0.5, 0.0});
    CHECK(conditional_firing_prob(x0, wz, uniform_routing(1, 1), 0) == 0.0);

    // |z| = 1 -> 1/2
    PredictionWeights wu(1, 1, 1, 1);
    wu.mat(0, 0)[0] = 1.0;
    CapsuleLayer xu(1, 1);
    xu.set_cap(0, Vec{1.0});
    CHECK(conditional_firing_prob(xu, wu, uniform_routing(1, 1), 0) ==
          doctest::Approx(0.5).epsilon(1e-15));

    Rng rng(47);
    for (int trial = 0; trial < 100; ++trial) {
        const int I = 2 + static_cast<int>(rng.next_u64() % 4);
        const int J = 1 + static_cast<int>(rng.next_u64() % 4);
        const int d = 2 + static_cast<int>(rng.next_u64() % 3);
        PredictionWeights w = PredictionWeights::random(I, J, d, d, rng, 0.8);
        CapsuleLayer x = testutil::random_squashed_layer(I, d, rng);
        const RouteResult r = route(x, w, 3);
        const CapsuleLayer z = collect_preactivations(x, w, r.state);
        for (int j = 0; j < J; ++j) {
            const double p = conditional_firing_prob(x, w, r.state, j);
            // matches the squashed magnitude
            CHECK(rel_diff(p, norm(squash(z.cap(j)))) <= 1e-12);
            // matches the two-term Boltzmann ratio from the energy
            const double e_on = energy(x, FiringVector::from_mask(1u << j, J), w, r.state);
            const double e_off = energy(x, FiringVector::from_mask(0, J), w, r.state);
            const double ratio = std::exp(-e_on) / (std::exp(-e_on) + std::exp(-e_off));
            CHECK(rel_diff(p, ratio) <= 1e-12);
        }
    }
}

TEST_CASE("unnormalized marginal hand value (1+1)(1+3)=8") {
    // d=1, two receivers; uniform coefficients; z_1 = 1, z_2 = sqrt(3)
    PredictionWeights w(2, 2, 1, 1);
    w.mat(0, 0)[0] = 1.0;
    w.mat(1, 0)[0] = 1.0;
    w.mat(0, 1)[0] = std::sqrt(3.0);
    w.mat(1, 1)[0] = std::sqrt(3.0);
    CapsuleLayer x(2, 1);
    x.set_cap(0, Vec{1.0});
    x.set_cap(1, Vec{1.0});
    const RoutingState st = uniform_routing(2, 2);
    CHECK(unnormalized_marginal(x, w, st) == doctest::Approx(8.0).epsilon(1e-12));

    // all-zero receivers -> product of ones
    PredictionWeights wz(2, 2, 1, 1);
    CHECK(unnormalized_marginal(x, wz, st) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("unnormalized marginal equals brute-force enumeration over firings") {
    Rng rng(48);
    for (int J : {1, 3, 6, 10}) {
        const int I = 4, d = 3;
        PredictionWeights w = PredictionWeights::random(I, J, d, d, rng, 0.8);
        CapsuleLayer x = testutil::random_squashed_layer(I, d, rng);
        const RouteResult r = route(x, w, 3);

        // oracle: sum over all 2^J firing vectors of exp(-energy)
        double sum = 0.0;
        for (uint32_t mask = 0; mask < (1u << J); ++mask)
            sum += std::exp(-energy(x, FiringVector::from_mask(mask, J), w, r.state));
        const double got = unnormalized_marginal(x, w, r.state);
        CHECK(rel_diff(got, sum) <= 1e-9);
    }
}

TEST_CASE("brute-force joint normalizes, factorizes, matches conditionals") {
    Rng rng(49);
    for (int J : {1, 2, 4, 6}) {
        const int I = 3, d = 3;
        PredictionWeights w = PredictionWeights::random(I, J, d, d, rng, 0.8);
        CapsuleLayer x = testutil::random_squashed_layer(I, d, rng);
        const RouteResult r = route(x, w, 3);

        const std::vector<double> joint = brute_force_joint(x, w, r.state);
        REQUIRE(joint.size() == (1u << J));
        double total = 0.0;
        for (double p : joint) total += p;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

        // independent oracle for each table entry via energy()
        double zsum = 0.0;
        for (uint32_t mask = 0; mask < (1u << J); ++mask)
            zsum += std::exp(-energy(x, FiringVector::from_mask(mask, J), w, r.state));
        for (uint32_t mask = 0; mask < (1u << J); ++mask) {
            const double want =
                std::exp(-energy(x, FiringVector::from_mask(mask, J), w, r.state)) / zsum;
            CHECK(rel_diff(joint[mask], want) <= 1e-9);
        }

        // factorization into per-capsule conditionals
        for (uint32_t mask = 0; mask < (1u << J); ++mask) {
            double prod = 1.0;
            for (int j = 0; j < J; ++j) {
                const double pj = conditional_firing_prob(x, w, r.state, j);
                prod *= ((mask >> j) & 1u) ? pj : (1.0 - pj);
            }
            CHECK(std::abs(joint[mask] - prod) <= 1e-9);
        }
    }
}

TEST_CASE("brute-force joint single capsule with |z|=1 splits evenly") {
    PredictionWeights w(1, 1, 1, 1);
    w.mat(0, 0)[0] = 1.0;
    CapsuleLayer x(1, 1);
    x.set_cap(0, Vec{1.0});
    RoutingState st = uniform_routing(1, 1);
    const auto joint = brute_force_joint(x, w, st);
    CHECK(joint[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(joint[1] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("brute-force joint refuses large layers") {
    PredictionWeights w(1, 13, 1, 1);
    CapsuleLayer x(1, 1);
    RoutingState st = uniform_routing(1, 13);
    CHECK_THROWS_AS(brute_force_joint(x, w, st), ShapeError);
}
