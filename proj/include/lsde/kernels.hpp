#pragma once

#include <cstdint>

#include "lsde/sde.hpp"
#include "lsde/vae.hpp"

namespace lsde {

/// Pair-summed loss terms (entropy, prior, transition, reconstruction;
/// l1 left at zero) divided by the batch size, with their gradient.
/// Reference version: one pair at a time, single-column passes.
LossEval loss_terms_serial(const VaeModel& model, const PairBatch& batch, bool want_grad);

/// Same quantity from batched passes over fixed chunks of `chunk` pairs,
/// spread over OpenMP threads and reduced in chunk order, so the result
/// does not depend on the thread count.
LossEval loss_terms_parallel(const VaeModel& model, const PairBatch& batch, bool want_grad,
                             int chunk = 64);

/// Final states of independent Euler-Maruyama paths started at the columns
/// of z0. Path j draws its Wiener increments from its own counter range.
Mat simulate_ensemble_serial(const SdeSpec& spec, const Mat& z0, double dt, int n_steps,
                             std::uint64_t seed);
Mat simulate_ensemble_parallel(const SdeSpec& spec, const Mat& z0, double dt, int n_steps,
                               std::uint64_t seed);

}  // namespace lsde
