#pragma once

#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "dualipw/dataset/session.hpp"
#include "dualipw/numkit/rng.hpp"

namespace dualipw::dataset {

/// Shuffles session indices once per epoch and cuts them into batches; the
/// last batch may be partial.
class BatchSampler {
 public:
  BatchSampler(std::size_t num_items, std::size_t batch_size, numkit::Rng rng)
      : order_(num_items), batch_size_(batch_size), rng_(rng) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  std::vector<std::vector<std::size_t>> next_epoch() {
    rng_.shuffle(std::span<std::size_t>(order_));
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order_.size(); i += batch_size_) {
      const std::size_t end = std::min(order_.size(), i + batch_size_);
      batches.emplace_back(order_.begin() + static_cast<std::ptrdiff_t>(i),
                           order_.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  numkit::Rng rng_;
};

using Batch = std::vector<const QuerySession*>;

// One epoch of batches drawn from the "batch" stream of `seed`.
inline std::vector<Batch> batch_iter(const SessionSet& set, std::size_t batch_size,
                                     std::uint64_t seed) {
  BatchSampler sampler(set.size(), batch_size, numkit::Rng::stream(seed, "batch"));
  std::vector<Batch> out;
  for (const auto& idx : sampler.next_epoch()) {
    Batch b;
    for (std::size_t i : idx) b.push_back(&set.sessions[i]);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace dualipw::dataset
