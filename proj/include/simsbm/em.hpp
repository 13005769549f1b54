#pragma once

#include "simsbm/dataset.hpp"
#include "simsbm/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace simsbm {

/// Posterior over cluster assignments for one observation, indexed by the
/// full (row-major, non-canonical) assignment index of the spec's Layout.
struct Responsibility {
    std::vector<double> omega;
    /// P(o | context) under the model the responsibility was computed with.
    double probability = 0.0;
};

/// Per-entity totals C_m (count-weighted occurrences, repeated layers counted
/// once per layer). Depends on the data only.
using EntityTotals = std::vector<std::vector<double>>;
EntityTotals entity_totals(const Dataset& data);

/// Sums needed by the closed-form M-step, gathered over one pass.
struct SufficientStats {
    std::shared_ptr<const Layout> layout;
    ModelSpec spec;
    /// Per type, entities x clusters: sum of count * c_k(n) * omega(k).
    std::vector<std::vector<double>> theta_num;
    /// Per type, per entity: C_m.
    EntityTotals theta_den;
    /// Width outputs + 1: per-output numerators followed by the denominator.
    RowStore p_stats;
    /// Log-likelihood of the model the statistics were gathered under.
    double log_likelihood = 0.0;

    /// All-zero accumulators shaped for `layout`.
    static SufficientStats zeros(std::shared_ptr<const Layout> layout, const ModelSpec& spec);

    std::span<const double> p_num(std::uint64_t canonical) const;
    double p_den(std::uint64_t canonical) const;

    /// Adds another partial pass (theta_den is data-only and left untouched).
    void merge(const SufficientStats& other);
};

enum class Reduction {
    kDeterministic, ///< partials merged in worker order: bit-reproducible
    kUnordered,     ///< partials merged as workers finish
};

struct AccumulateOptions {
    std::size_t jobs = 1;
    Reduction reduction = Reduction::kDeterministic;
};

struct MStepOptions {
    /// Throw FitError if an entity with C_m > 0 gets a theta row whose sum
    /// is off by more than `tolerance`. Rows are never renormalized.
    bool check_normalization = false;
    double tolerance = 1e-9;
};

enum class KeepPolicy { kBestLikelihood, kAll };

struct IterationEvent {
    std::size_t restart = 0;
    std::uint64_t seed = 0;
    std::size_t iteration = 0;
    double log_likelihood = 0.0;
    double relative_change = 0.0;
};

struct FitConfig {
    double rel_tol = 1e-4;
    std::size_t patience = 30;
    std::size_t max_iters = 1000;
    std::size_t restarts = 100;
    std::uint64_t seed = 0;
    KeepPolicy keep = KeepPolicy::kBestLikelihood;
    std::size_t jobs = 1;
    Reduction reduction = Reduction::kDeterministic;
    /// Called after every iteration; calls are serialized.
    std::function<void(const IterationEvent&)> on_iteration;
};

/// Throws SpecError for out-of-range settings.
void validate_fit_config(const FitConfig& cfg);

struct RestartResult {
    std::uint64_t seed = 0;
    std::size_t iterations = 0;
    /// Log-likelihood of the initial model, then after every M-step.
    std::vector<double> trace;
    bool converged = false;
    /// Absent for non-selected restarts under KeepPolicy::kBestLikelihood.
    std::optional<Model> model;

    double final_log_likelihood() const { return trace.back(); }
};

struct FitReport {
    std::vector<RestartResult> restarts;
    std::size_t selected = 0;

    const Model& selected_model() const { return *restarts[selected].model; }
};

/// Random simplex rows for every theta row and tensor row; deterministic in
/// `seed`. Sparse tensors start uniform.
Model init_params(const ModelSpec& spec, std::uint64_t seed);

/// omega(k) = p_k(o) prod_n theta[f_n][k_n] / sum over k'. When every term is
/// zero, p is floored at kProbabilityFloor before normalizing.
Responsibility e_step(const Model& model, std::span<const std::uint32_t> context,
                      std::uint32_t output);

/// c_k(n): how many of the positions `entity_positions` (where one entity sits
/// in the context) carry cluster `cluster` in assignment `clusters`.
std::size_t count_in_block(std::span<const std::uint32_t> clusters,
                           std::span<const std::size_t> entity_positions, std::uint32_t cluster);

/// Layer positions of `context` holding entity `entity` of type `type`.
std::vector<std::size_t> entity_positions(const Layout& layout,
                                          std::span<const std::uint32_t> context,
                                          std::size_t type, std::uint32_t entity);

SufficientStats accumulate(const Model& model, const Dataset& data, const AccumulateOptions& opts = {});
SufficientStats accumulate(const Model& model, const Dataset& data, const EntityTotals& totals,
                           const AccumulateOptions& opts = {});

/// Closed-form maximization. Entities with C_m = 0 and assignments with a
/// zero denominator get uniform rows.
Model m_step(const SufficientStats& stats, const MStepOptions& opts = {});

/// accumulate followed by m_step.
Model em_step(const Model& model, const Dataset& data, const AccumulateOptions& opts = {});

/// Multi-restart EM. Restart r starts from init_params(spec, cfg.seed + r).
/// Throws FitError on an empty dataset.
FitReport fit(const ModelSpec& spec, const Dataset& data, const FitConfig& cfg);

/// Relative change |cur - prev| / |prev| used by the stopping rule.
double relative_change(double previous, double current);

} // namespace simsbm
