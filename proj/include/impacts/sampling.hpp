#ifndef IMPACTS_SAMPLING_HPP
#define IMPACTS_SAMPLING_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "impacts/bio.hpp"

namespace impacts {

/// Samples ceil(fraction * N) posts without replacement, deterministic under
/// seed, stratified so the entity-bearing share of the sample tracks the
/// corpus share within one post. Output keeps the original corpus order.
CorpusSplit subsample(const CorpusSplit& split, double fraction,
                      std::uint64_t seed);

/// Splits into (rest, held_out) with |held_out| = ceil(holdout_fraction * N),
/// stratified like subsample. The two outputs partition the input.
std::pair<CorpusSplit, CorpusSplit> stratified_holdout(const CorpusSplit& split,
                                                       double holdout_fraction,
                                                       std::uint64_t seed);

}  // namespace impacts

#endif  // IMPACTS_SAMPLING_HPP
