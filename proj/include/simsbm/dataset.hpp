#pragma once

#include "simsbm/model_spec.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace simsbm {

/// One context/output pair with its multiplicity.
struct Observation {
    std::vector<std::uint32_t> context;
    std::uint32_t output = 0;
    std::uint64_t count = 1;
};

/// Read-only view into a Dataset row.
struct ObservationView {
    std::span<const std::uint32_t> context;
    std::uint32_t output;
    std::uint64_t count;
};

/// Deduplicated multiset of observations for one spec.
///
/// Contexts are canonical (sorted inside same-type layer groups), rows are
/// unique on (context, output) and sorted, so the order in which raw
/// observations were supplied never changes the result.
class Dataset {
  public:
    Dataset() = default;

    /// Validates ranges, canonicalizes, merges duplicates. Throws DataError.
    Dataset(ModelSpec spec, std::span<const Observation> observations);

    const ModelSpec& spec() const { return spec_; }
    std::size_t size() const { return outputs_.size(); }
    bool empty() const { return outputs_.empty(); }
    std::size_t layer_count() const { return spec_.layers.size(); }
    /// |R°|, the sum of counts.
    std::uint64_t total_weight() const { return total_weight_; }

    ObservationView operator[](std::size_t i) const {
        const auto n = layer_count();
        return {std::span<const std::uint32_t>(contexts_).subspan(i * n, n), outputs_[i], counts_[i]};
    }

    std::vector<Observation> observations() const;

    bool operator==(const Dataset&) const = default;

  private:
    ModelSpec spec_;
    std::vector<std::uint32_t> contexts_;
    std::vector<std::uint32_t> outputs_;
    std::vector<std::uint64_t> counts_;
    std::uint64_t total_weight_ = 0;
};

} // namespace simsbm
