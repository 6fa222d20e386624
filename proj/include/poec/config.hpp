#pragma once

#include <cstdint>

namespace poec {

// Hyperparameters shared by all trainers.
struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double l2 = 1e-4;
    double lr_decay = 0.98;  // multiplicative, per epoch
    int routing_iters = 3;
    uint64_t seed = 1;
    double init_std = 0.01;
    int threads = 0;  // <= 0: runtime default; results do not depend on it

    // Throws DomainError on out-of-range values.
    void validate() const;
};

}  // namespace poec
