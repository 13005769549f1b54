#include "simsbm/em.hpp"

#include "assignment_kernel.hpp"
#include "simsbm/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <random>
#include <thread>

namespace simsbm {

namespace {

std::shared_ptr<const Layout> layout_for(const Model& model) { return model.layout_ptr(); }

void require_data_matches(const ModelSpec& spec, const Dataset& data) {
    if (!data.empty() && !same_data_shape(spec, data.spec()))
        throw SpecError("dataset was built for a different spec (" + data.spec().notation() +
                        ") than the model (" + spec.notation() + ")");
}

/// Scratch buffers reused across observations by one worker.
struct Workspace {
    std::vector<const double*> rows;
    std::vector<double> weights;
    std::vector<std::uint64_t> canonical;
    std::vector<double> marginals;
};

/// Unnormalized joint weights p_k(o) prod theta for every assignment, plus
/// per-layer marginals. Returns their sum. `floor_p` replaces p_k(o) by the
/// probability floor (used when every weight vanished).
double joint_weights(const Model& model, std::uint32_t output, bool floor_p, Workspace& ws) {
    const auto& layout = model.layout();
    const auto& tensor = model.tensor();
    const std::size_t n_layers = layout.layer_count();
    std::size_t max_k = 0;
    for (auto k : layout.layer_clusters()) max_k = std::max(max_k, k);
    ws.weights.resize(layout.full_count());
    ws.canonical.resize(layout.full_count());
    ws.marginals.assign(n_layers * max_k, 0.0);
    double sum = 0.0;
    detail::for_each_assignment(
        layout, ws.rows,
        [&](std::uint64_t full, std::uint64_t canonical, std::span<const std::uint32_t> clusters,
            double theta_product) {
            const double w = theta_product * (floor_p ? kProbabilityFloor : tensor.row(canonical)[output]);
            ws.weights[full] = w;
            ws.canonical[full] = canonical;
            sum += w;
            if (w != 0.0) {
                for (std::size_t n = 0; n < n_layers; ++n) ws.marginals[n * max_k + clusters[n]] += w;
            }
        });
    return sum;
}

void accumulate_range(const Model& model, const Dataset& data, std::size_t begin, std::size_t end,
                      SufficientStats& stats, Workspace& ws) {
    const auto& layout = model.layout();
    const std::size_t n_layers = layout.layer_count();
    const std::size_t outputs = layout.output_count();
    std::size_t max_k = 0;
    for (auto k : layout.layer_clusters()) max_k = std::max(max_k, k);

    for (std::size_t i = begin; i < end; ++i) {
        const auto obs = data[i];
        detail::gather_rows(model, obs.context, ws.rows);
        double sum = joint_weights(model, obs.output, false, ws);
        const double count = static_cast<double>(obs.count);
        stats.log_likelihood += count * std::log(std::max(sum, kProbabilityFloor));
        if (!(sum > 0.0)) sum = joint_weights(model, obs.output, true, ws);

        const double scale = count / sum;
        for (std::uint64_t j = 0; j < ws.weights.size(); ++j) {
            const double omega = ws.weights[j] * scale;
            if (omega == 0.0) continue;
            double* row = stats.p_stats.insert(ws.canonical[j]);
            row[obs.output] += omega;
            row[outputs] += omega;
        }
        // Summing the marginal of layer n over the positions an entity
        // occupies gives sum_k c_k(n) omega(k).
        for (std::size_t n = 0; n < n_layers; ++n) {
            const auto t = layout.layer_type(n);
            const auto k_count = layout.layer_clusters(n);
            double* num = stats.theta_num[t].data() + std::size_t{obs.context[n]} * k_count;
            const double* marginal = ws.marginals.data() + n * max_k;
            for (std::size_t k = 0; k < k_count; ++k) num[k] += marginal[k] * scale;
        }
    }
}

/// Uniform draws in (0, 1] normalized to sum to one.
void random_simplex(std::mt19937_64& rng, std::span<double> out) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double sum = 0.0;
    for (auto& v : out) {
        do {
            v = unit(rng);
        } while (v == 0.0);
        sum += v;
    }
    for (auto& v : out) v /= sum;
}

} // namespace

EntityTotals entity_totals(const Dataset& data) {
    const auto& spec = data.spec();
    EntityTotals totals;
    for (const auto& type : spec.types) totals.emplace_back(type.entity_count, 0.0);
    if (data.empty()) return totals;
    std::vector<std::size_t> layer_type;
    for (const auto& layer : spec.layers) layer_type.push_back(spec.type_index(layer));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto obs = data[i];
        for (std::size_t n = 0; n < layer_type.size(); ++n)
            totals[layer_type[n]][obs.context[n]] += static_cast<double>(obs.count);
    }
    return totals;
}

SufficientStats SufficientStats::zeros(std::shared_ptr<const Layout> layout, const ModelSpec& spec) {
    SufficientStats stats;
    stats.spec = spec;
    for (const auto& type : spec.types) {
        stats.theta_num.emplace_back(type.entity_count * type.cluster_count, 0.0);
        stats.theta_den.emplace_back(type.entity_count, 0.0);
    }
    const auto width = spec.output_count + 1;
    stats.p_stats = use_dense_storage(*layout) ? RowStore::dense(layout->canonical_count(), width)
                                               : RowStore::sparse(width);
    stats.layout = std::move(layout);
    return stats;
}

std::span<const double> SufficientStats::p_num(std::uint64_t canonical) const {
    static const std::vector<double> zeros_row(spec.output_count, 0.0);
    const double* row = p_stats.find(canonical);
    if (!row) return {zeros_row.data(), spec.output_count};
    return {row, spec.output_count};
}

double SufficientStats::p_den(std::uint64_t canonical) const {
    const double* row = p_stats.find(canonical);
    return row ? row[spec.output_count] : 0.0;
}

void SufficientStats::merge(const SufficientStats& other) {
    for (std::size_t t = 0; t < theta_num.size(); ++t) {
        auto& dst = theta_num[t];
        const auto& src = other.theta_num[t];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    p_stats.add(other.p_stats);
    log_likelihood += other.log_likelihood;
}

void validate_fit_config(const FitConfig& cfg) {
    if (!(cfg.rel_tol > 0.0)) throw SpecError("rel_tol must be > 0");
    if (cfg.patience < 1) throw SpecError("patience must be >= 1");
    if (cfg.restarts < 1) throw SpecError("restarts must be >= 1");
    if (cfg.jobs < 1) throw SpecError("jobs must be >= 1");
}

Model init_params(const ModelSpec& spec, std::uint64_t seed) {
    auto layout = std::make_shared<const Layout>(spec);
    std::mt19937_64 rng(seed);
    std::vector<MembershipMatrix> memberships;
    for (const auto& type : spec.types) {
        MembershipMatrix theta(type.name, type.entity_count, type.cluster_count);
        for (std::size_t m = 0; m < type.entity_count; ++m) random_simplex(rng, theta.row(m));
        memberships.push_back(std::move(theta));
    }
    ClusterTensor tensor = ClusterTensor::uniform(layout);
    if (tensor.is_dense()) {
        RowStore rows = RowStore::dense(layout->canonical_count(), spec.output_count);
        rows.for_each_mutable([&](std::uint64_t, std::span<double> row) { random_simplex(rng, row); });
        tensor = ClusterTensor(layout, std::move(rows));
    }
    return Model(layout, spec, std::move(memberships), std::move(tensor));
}

Responsibility e_step(const Model& model, std::span<const std::uint32_t> context, std::uint32_t output) {
    if (output >= model.spec().output_count) throw std::out_of_range("output index out of range");
    Workspace ws;
    detail::gather_rows(model, context, ws.rows);
    double sum = joint_weights(model, output, false, ws);
    Responsibility r;
    r.probability = std::max(sum, kProbabilityFloor);
    if (!(sum > 0.0)) sum = joint_weights(model, output, true, ws);
    r.omega = std::move(ws.weights);
    for (auto& w : r.omega) w /= sum;
    return r;
}

std::size_t count_in_block(std::span<const std::uint32_t> clusters,
                           std::span<const std::size_t> entity_positions, std::uint32_t cluster) {
    std::size_t count = 0;
    for (auto i : entity_positions) count += clusters[i] == cluster ? 1 : 0;
    return count;
}

std::vector<std::size_t> entity_positions(const Layout& layout, std::span<const std::uint32_t> context,
                                          std::size_t type, std::uint32_t entity) {
    std::vector<std::size_t> out;
    for (auto n : layout.positions_of_type(type)) {
        if (context[n] == entity) out.push_back(n);
    }
    return out;
}

SufficientStats accumulate(const Model& model, const Dataset& data, const AccumulateOptions& opts) {
    return accumulate(model, data, entity_totals(data), opts);
}

SufficientStats accumulate(const Model& model, const Dataset& data, const EntityTotals& totals,
                           const AccumulateOptions& opts) {
    require_data_matches(model.spec(), data);
    auto stats = SufficientStats::zeros(layout_for(model), model.spec());
    stats.theta_den = totals;

    const std::size_t jobs = std::clamp<std::size_t>(opts.jobs, 1, std::max<std::size_t>(data.size(), 1));
    if (jobs == 1) {
        Workspace ws;
        accumulate_range(model, data, 0, data.size(), stats, ws);
        return stats;
    }

    const std::size_t chunk = (data.size() + jobs - 1) / jobs;
    std::vector<SufficientStats> partials;
    partials.reserve(jobs);
    for (std::size_t w = 0; w < jobs; ++w) partials.push_back(SufficientStats::zeros(stats.layout, stats.spec));

    std::mutex merge_mutex;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&, w] {
            const std::size_t begin = std::min(data.size(), w * chunk);
            const std::size_t end = std::min(data.size(), begin + chunk);
            Workspace ws;
            accumulate_range(model, data, begin, end, partials[w], ws);
            if (opts.reduction == Reduction::kUnordered) {
                std::lock_guard lock(merge_mutex);
                stats.merge(partials[w]);
            }
        });
    }
    for (auto& t : workers) t.join();
    if (opts.reduction == Reduction::kDeterministic) {
        for (const auto& partial : partials) stats.merge(partial);
    }
    return stats;
}

Model m_step(const SufficientStats& stats, const MStepOptions& opts) {
    const auto& spec = stats.spec;
    std::vector<MembershipMatrix> memberships;
    for (std::size_t t = 0; t < spec.types.size(); ++t) {
        const auto& type = spec.types[t];
        const auto k_count = type.cluster_count;
        MembershipMatrix theta(type.name, type.entity_count, k_count);
        for (std::size_t m = 0; m < type.entity_count; ++m) {
            auto row = theta.row(m);
            const double total = stats.theta_den[t][m];
            if (total > 0.0) {
                const double* num = stats.theta_num[t].data() + m * k_count;
                double sum = 0.0;
                for (std::size_t k = 0; k < k_count; ++k) {
                    row[k] = num[k] / total;
                    sum += row[k];
                }
                if (opts.check_normalization && std::abs(sum - 1.0) > opts.tolerance)
                    throw FitError("theta row for " + type.name + "[" + std::to_string(m) +
                                   "] is not normalized after the M-step");
            } else {
                std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(k_count));
            }
        }
        memberships.push_back(std::move(theta));
    }

    const std::size_t outputs = spec.output_count;
    const double uniform = 1.0 / static_cast<double>(outputs);
    RowStore rows = stats.p_stats.is_dense() ? RowStore::dense(stats.layout->canonical_count(), outputs)
                                             : RowStore::sparse(outputs);
    stats.p_stats.for_each([&](std::uint64_t key, std::span<const double> acc) {
        const double den = acc[outputs];
        if (!stats.p_stats.is_dense() && !(den > 0.0)) return;
        double* dst = rows.insert(key);
        for (std::size_t o = 0; o < outputs; ++o) dst[o] = den > 0.0 ? acc[o] / den : uniform;
    });
    return Model(stats.layout, spec, std::move(memberships), ClusterTensor(stats.layout, std::move(rows)));
}

Model em_step(const Model& model, const Dataset& data, const AccumulateOptions& opts) {
    return m_step(accumulate(model, data, opts));
}

double relative_change(double previous, double current) {
    if (previous == current) return 0.0;
    if (previous == 0.0) return std::numeric_limits<double>::infinity();
    return std::abs(current - previous) / std::abs(previous);
}

namespace {

RestartResult run_restart(const ModelSpec& spec, const Dataset& data, const EntityTotals& totals,
                          const FitConfig& cfg, std::size_t restart, std::size_t jobs,
                          std::mutex& callback_mutex) {
    RestartResult result;
    result.seed = cfg.seed + restart;
    const AccumulateOptions acc{jobs, cfg.reduction};

    Model model = init_params(spec, result.seed);
    SufficientStats stats = accumulate(model, data, totals, acc);
    result.trace.push_back(stats.log_likelihood);

    std::size_t streak = 0;
    while (result.iterations < cfg.max_iters) {
        model = m_step(stats);
        ++result.iterations;
        stats = accumulate(model, data, totals, acc);
        const double previous = result.trace.back();
        result.trace.push_back(stats.log_likelihood);
        const double change = relative_change(previous, stats.log_likelihood);
        streak = change < cfg.rel_tol ? streak + 1 : 0;
        if (cfg.on_iteration) {
            std::lock_guard lock(callback_mutex);
            cfg.on_iteration({restart, result.seed, result.iterations, stats.log_likelihood, change});
        }
        if (streak >= cfg.patience) {
            result.converged = true;
            break;
        }
    }
    result.model = std::move(model);
    return result;
}

} // namespace

FitReport fit(const ModelSpec& spec, const Dataset& data, const FitConfig& cfg) {
    require_valid(spec);
    validate_fit_config(cfg);
    if (data.empty()) throw FitError("no observations");
    require_data_matches(spec, data);

    const EntityTotals totals = entity_totals(data);
    FitReport report;
    report.restarts.resize(cfg.restarts);
    std::mutex callback_mutex;

    // Parallelize across restarts when there are enough of them, otherwise
    // across observations inside each restart.
    const bool parallel_restarts = cfg.jobs > 1 && cfg.restarts > 1;
    if (!parallel_restarts) {
        for (std::size_t r = 0; r < cfg.restarts; ++r)
            report.restarts[r] = run_restart(spec, data, totals, cfg, r, cfg.jobs, callback_mutex);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        const std::size_t n_workers = std::min(cfg.jobs, cfg.restarts);
        for (std::size_t w = 0; w < n_workers; ++w) {
            workers.emplace_back([&] {
                for (std::size_t r = next++; r < cfg.restarts; r = next++)
                    report.restarts[r] = run_restart(spec, data, totals, cfg, r, 1, callback_mutex);
            });
        }
        for (auto& t : workers) t.join();
    }

    for (std::size_t r = 1; r < report.restarts.size(); ++r) {
        if (report.restarts[r].final_log_likelihood() >
            report.restarts[report.selected].final_log_likelihood())
            report.selected = r;
    }
    if (cfg.keep == KeepPolicy::kBestLikelihood) {
        for (std::size_t r = 0; r < report.restarts.size(); ++r) {
            if (r != report.selected) report.restarts[r].model.reset();
        }
    }
    return report;
}

} // namespace simsbm
