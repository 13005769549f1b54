#pragma once

#include "simsbm/model.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace simsbm::detail {

/// Membership rows for the entities of `context`, one per layer.
inline void gather_rows(const Model& model, std::span<const std::uint32_t> context,
                        std::vector<const double*>& rows) {
    const auto& layout = model.layout();
    if (context.size() != layout.layer_count())
        throw std::out_of_range("context has " + std::to_string(context.size()) +
                                " entries, expected " + std::to_string(layout.layer_count()));
    rows.resize(context.size());
    for (std::size_t n = 0; n < context.size(); ++n) {
        const auto& theta = model.membership(layout.layer_type(n));
        if (context[n] >= theta.entities())
            throw std::out_of_range("entity index " + std::to_string(context[n]) +
                                    " out of range for layer " + std::to_string(n));
        rows[n] = theta.row(context[n]).data();
    }
}

/// Odometer over every cluster assignment k (last layer fastest). Calls
/// fn(full_index, canonical_index, clusters, prod_n theta[f_n][k_n]).
template <class Fn>
void for_each_assignment(const Layout& layout, std::span<const double* const> rows, Fn&& fn) {
    const std::size_t n_layers = layout.layer_count();
    const auto radix = layout.layer_clusters();
    std::vector<std::uint32_t> clusters(n_layers, 0);
    std::vector<double> prefix(n_layers + 1, 1.0);
    for (std::size_t n = 0; n < n_layers; ++n) prefix[n + 1] = prefix[n] * rows[n][0];

    const std::uint64_t total = layout.full_count();
    for (std::uint64_t j = 0; j < total; ++j) {
        fn(j, layout.canonical_of_full(j, clusters), std::span<const std::uint32_t>(clusters),
           prefix[n_layers]);
        std::size_t n = n_layers;
        while (n > 0) {
            --n;
            if (++clusters[n] < radix[n]) break;
            clusters[n] = 0;
        }
        for (std::size_t i = n; i < n_layers; ++i) prefix[i + 1] = prefix[i] * rows[i][clusters[i]];
    }
}

} // namespace simsbm::detail
