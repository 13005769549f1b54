#include "simsbm/dataset.hpp"

#include "simsbm/errors.hpp"

#include <algorithm>
#include <map>
#include <string>

namespace simsbm {

Dataset::Dataset(ModelSpec spec, std::span<const Observation> observations)
    : spec_(std::move(spec)) {
    require_valid(spec_);
    const auto n_layers = spec_.layers.size();
    std::vector<std::size_t> limits;
    for (const auto& layer : spec_.layers)
        limits.push_back(spec_.types[spec_.type_index(layer)].entity_count);

    // key = canonical context followed by the output
    std::map<std::vector<std::uint32_t>, std::uint64_t> merged;
    for (const auto& obs : observations) {
        if (obs.context.size() != n_layers)
            throw DataError("observation has " + std::to_string(obs.context.size()) +
                            " context entries, expected " + std::to_string(n_layers));
        for (std::size_t n = 0; n < n_layers; ++n) {
            if (obs.context[n] >= limits[n])
                throw DataError("entity index " + std::to_string(obs.context[n]) +
                                " out of range for layer " + std::to_string(n));
        }
        if (obs.output >= spec_.output_count)
            throw DataError("output index " + std::to_string(obs.output) + " out of range");
        if (obs.count == 0) throw DataError("observation count must be >= 1");
        auto key = canonicalize_context(spec_, obs.context);
        key.push_back(obs.output);
        merged[std::move(key)] += obs.count;
    }

    contexts_.reserve(merged.size() * n_layers);
    outputs_.reserve(merged.size());
    counts_.reserve(merged.size());
    for (const auto& [key, count] : merged) {
        contexts_.insert(contexts_.end(), key.begin(), key.end() - 1);
        outputs_.push_back(key.back());
        counts_.push_back(count);
        total_weight_ += count;
    }
}

std::vector<Observation> Dataset::observations() const {
    std::vector<Observation> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) {
        const auto row = (*this)[i];
        out.push_back({{row.context.begin(), row.context.end()}, row.output, row.count});
    }
    return out;
}

} // namespace simsbm
