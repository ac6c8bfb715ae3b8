#include "impacts/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "impacts/errors.hpp"
#include "impacts/rng.hpp"

namespace impacts {

namespace {

bool has_entity(const TaggedSequence& seq) {
  return std::any_of(seq.labels.begin(), seq.labels.end(), [](const Label& l) {
    return l.kind != LabelKind::Outside;
  });
}

// Picks ceil(fraction*N) indices, stratified by entity presence. The
// entity-bearing quota is round(n * E / N) clamped to feasibility, which
// keeps the sampled share within one post of the corpus share.
std::vector<std::size_t> pick_indices(const CorpusSplit& split,
                                      double fraction, std::uint64_t seed) {
  const std::size_t n_total = split.sequences.size();
  if (n_total == 0) throw ValidationError("cannot sample an empty corpus");
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ValidationError("fraction must be in (0, 1], got " +
                          std::to_string(fraction));
  }
  const auto n = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n_total)));

  std::vector<std::size_t> entity_idx, other_idx;
  for (std::size_t i = 0; i < n_total; ++i) {
    (has_entity(split.sequences[i]) ? entity_idx : other_idx).push_back(i);
  }
  const std::size_t n_entity = entity_idx.size();
  const std::size_t n_other = other_idx.size();

  auto want = static_cast<std::size_t>(std::llround(
      static_cast<double>(n) * static_cast<double>(n_entity) /
      static_cast<double>(n_total)));
  const std::size_t lo = n > n_other ? n - n_other : 0;
  const std::size_t hi = std::min(n, n_entity);
  const std::size_t k_entity = std::clamp(want, lo, hi);
  const std::size_t k_other = n - k_entity;

  Rng rng(seed);
  rng.shuffle(entity_idx);
  rng.shuffle(other_idx);
  std::vector<std::size_t> picked(entity_idx.begin(),
                                  entity_idx.begin() + k_entity);
  picked.insert(picked.end(), other_idx.begin(), other_idx.begin() + k_other);
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace

CorpusSplit subsample(const CorpusSplit& split, double fraction,
                      std::uint64_t seed) {
  CorpusSplit out;
  out.name = split.name;
  for (std::size_t i : pick_indices(split, fraction, seed)) {
    out.sequences.push_back(split.sequences[i]);
  }
  return out;
}

std::pair<CorpusSplit, CorpusSplit> stratified_holdout(const CorpusSplit& split,
                                                       double holdout_fraction,
                                                       std::uint64_t seed) {
  if (!(holdout_fraction > 0.0) || holdout_fraction >= 1.0) {
    throw ValidationError("holdout fraction must be in (0, 1), got " +
                          std::to_string(holdout_fraction));
  }
  std::vector<std::size_t> held = pick_indices(split, holdout_fraction, seed);
  std::vector<bool> is_held(split.sequences.size(), false);
  for (std::size_t i : held) is_held[i] = true;

  CorpusSplit rest, holdout;
  rest.name = split.name;
  holdout.name = "validation";
  for (std::size_t i = 0; i < split.sequences.size(); ++i) {
    (is_held[i] ? holdout : rest).sequences.push_back(split.sequences[i]);
  }
  if (rest.sequences.empty()) {
    throw ValidationError("holdout fraction leaves no training posts");
  }
  return {std::move(rest), std::move(holdout)};
}

}  // namespace impacts
