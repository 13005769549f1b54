#include "simsbm/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace simsbm {

std::vector<std::pair<std::string, double>> metric_fields(const MetricReport& r) {
    return {{"f1_max", r.f1_max},
            {"p_at_1", r.p_at_1},
            {"auc_roc_weighted", r.auc_roc_weighted},
            {"auc_pr_weighted", r.auc_pr_weighted},
            {"rank_avg_precision", r.rank_avg_precision},
            {"coverage_error_normalized", r.coverage_error_normalized}};
}

namespace {

struct Entry {
    double score;
    double weight;
    bool positive;
};

/// Area under ROC, ties counted half. Entries are reordered.
double roc_auc(std::vector<Entry>& entries, double pos_total, double neg_total) {
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });
    double area = 0.0;
    double neg_below = 0.0;
    for (std::size_t i = 0; i < entries.size();) {
        std::size_t j = i;
        double pos_group = 0.0;
        double neg_group = 0.0;
        for (; j < entries.size() && entries[j].score == entries[i].score; ++j)
            (entries[j].positive ? pos_group : neg_group) += entries[j].weight;
        area += pos_group * (neg_below + 0.5 * neg_group);
        neg_below += neg_group;
        i = j;
    }
    return area / (pos_total * neg_total);
}

/// Step-wise average precision over descending distinct thresholds.
double average_precision(std::vector<Entry>& entries, double pos_total) {
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });
    double ap = 0.0;
    double tp = 0.0;
    double fp = 0.0;
    double previous_recall = 0.0;
    for (std::size_t i = 0; i < entries.size();) {
        std::size_t j = i;
        for (; j < entries.size() && entries[j].score == entries[i].score; ++j)
            (entries[j].positive ? tp : fp) += entries[j].weight;
        const double recall = tp / pos_total;
        if (tp + fp > 0.0) ap += (recall - previous_recall) * (tp / (tp + fp));
        previous_recall = recall;
        i = j;
    }
    return ap;
}

double f1(double tp, double fp, double fn) {
    const double den = 2.0 * tp + fp + fn;
    return den > 0.0 ? 2.0 * tp / den : 0.0;
}

/// Max over global thresholds t (taken from observed scores) of the
/// support-weighted one-vs-rest F1 where "score >= t" predicts positive.
double max_weighted_f1(const ScoredPredictions& preds, std::size_t outputs,
                       std::span<const double> support, double total) {
    struct Cell {
        double score;
        double weight;
        std::uint32_t cls;
        bool positive;
    };
    std::vector<Cell> cells;
    cells.reserve(preds.rows.size() * outputs);
    for (const auto& row : preds.rows) {
        for (std::size_t c = 0; c < outputs; ++c)
            cells.push_back({row.scores[c], row.weight, static_cast<std::uint32_t>(c), row.truth == c});
    }
    std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.score > b.score; });

    std::vector<double> tp(outputs, 0.0);
    std::vector<double> fp(outputs, 0.0);
    double weighted_sum = 0.0; // sum_c support_c * F1_c
    double best = 0.0;
    for (std::size_t i = 0; i < cells.size();) {
        std::size_t j = i;
        for (; j < cells.size() && cells[j].score == cells[i].score; ++j) {
            const auto c = cells[j].cls;
            if (support[c] == 0.0) {
                fp[c] += cells[j].weight;
                continue;
            }
            weighted_sum -= support[c] * f1(tp[c], fp[c], support[c] - tp[c]);
            (cells[j].positive ? tp[c] : fp[c]) += cells[j].weight;
            weighted_sum += support[c] * f1(tp[c], fp[c], support[c] - tp[c]);
        }
        best = std::max(best, weighted_sum / total);
        i = j;
    }
    return best;
}

} // namespace

MetricReport compute_metrics(const ScoredPredictions& preds, std::size_t outputs) {
    if (preds.rows.empty()) throw std::invalid_argument("compute_metrics: no rows");
    if (outputs == 0) throw std::invalid_argument("compute_metrics: no outputs");
    std::vector<double> support(outputs, 0.0);
    double total = 0.0;
    for (const auto& row : preds.rows) {
        if (row.scores.size() != outputs) throw std::invalid_argument("compute_metrics: score vector size mismatch");
        if (row.truth >= outputs) throw std::invalid_argument("compute_metrics: truth index out of range");
        if (!(row.weight > 0.0)) throw std::invalid_argument("compute_metrics: row weight must be positive");
        support[row.truth] += row.weight;
        total += row.weight;
    }

    MetricReport report;
    double hits = 0.0;
    double reciprocal_rank = 0.0;
    double coverage = 0.0;
    for (const auto& row : preds.rows) {
        const auto top = std::distance(row.scores.begin(), std::max_element(row.scores.begin(), row.scores.end()));
        if (static_cast<std::uint32_t>(top) == row.truth) hits += row.weight;
        const double truth_score = row.scores[row.truth];
        const auto greater = std::count_if(row.scores.begin(), row.scores.end(),
                                           [&](double s) { return s > truth_score; });
        const double rank = 1.0 + static_cast<double>(greater);
        reciprocal_rank += row.weight / rank;
        coverage += row.weight * rank / static_cast<double>(outputs);
    }
    report.p_at_1 = hits / total;
    report.rank_avg_precision = reciprocal_rank / total;
    report.coverage_error_normalized = coverage / total;

    double roc_sum = 0.0;
    double roc_weight = 0.0;
    double pr_sum = 0.0;
    double pr_weight = 0.0;
    std::vector<Entry> entries;
    for (std::size_t c = 0; c < outputs; ++c) {
        if (support[c] == 0.0) continue;
        entries.clear();
        for (const auto& row : preds.rows) entries.push_back({row.scores[c], row.weight, row.truth == c});
        const double negatives = total - support[c];
        pr_sum += support[c] * average_precision(entries, support[c]);
        pr_weight += support[c];
        if (negatives > 0.0) {
            roc_sum += support[c] * roc_auc(entries, support[c], negatives);
            roc_weight += support[c];
        } else {
            report.warnings.push_back("class " + std::to_string(c) +
                                      " has no negative instances; its ROC AUC is undefined and excluded");
        }
    }
    if (roc_weight > 0.0) {
        report.auc_roc_weighted = roc_sum / roc_weight;
    } else {
        report.auc_roc_weighted = std::numeric_limits<double>::quiet_NaN();
        report.warnings.emplace_back("no class has a defined ROC AUC");
    }
    report.auc_pr_weighted = pr_sum / pr_weight;
    report.f1_max = max_weighted_f1(preds, outputs, support, total);
    return report;
}

void FrequencyBaseline::score(std::span<const std::uint32_t>, std::span<double> out) const {
    std::copy(frequencies_.begin(), frequencies_.end(), out.begin());
}

FrequencyBaseline baseline_frequency(const Dataset& train) {
    if (train.empty()) throw std::invalid_argument("baseline_frequency: empty training set");
    std::vector<double> freq(train.spec().output_count, 0.0);
    for (std::size_t i = 0; i < train.size(); ++i) freq[train[i].output] += static_cast<double>(train[i].count);
    const double total = static_cast<double>(train.total_weight());
    for (auto& f : freq) f /= total;
    return FrequencyBaseline(std::move(freq));
}

NaiveBayesBaseline::NaiveBayesBaseline(const Dataset& train) {
    if (train.empty()) throw std::invalid_argument("baseline_naive_bayes: empty training set");
    const auto& spec = train.spec();
    const std::size_t outputs = spec.output_count;
    prior_.assign(outputs, 0.0);
    for (const auto& layer : spec.layers) layer_type_.push_back(spec.type_index(layer));
    for (const auto& type : spec.types) {
        entity_counts_.push_back(type.entity_count);
        joint_.emplace_back(type.entity_count * outputs, 0.0);
        output_totals_.emplace_back(outputs, 0.0);
    }
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto obs = train[i];
        const double w = static_cast<double>(obs.count);
        prior_[obs.output] += w;
        for (std::size_t n = 0; n < layer_type_.size(); ++n) {
            const auto t = layer_type_[n];
            joint_[t][std::size_t{obs.context[n]} * outputs + obs.output] += w;
            output_totals_[t][obs.output] += w;
        }
    }
    const double total = static_cast<double>(train.total_weight());
    for (auto& p : prior_) p /= total;
}

void NaiveBayesBaseline::score(std::span<const std::uint32_t> context, std::span<double> out) const {
    const std::size_t outputs = prior_.size();
    if (context.size() != layer_type_.size()) throw std::out_of_range("context length mismatch");
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < outputs; ++o) {
        double log_score = prior_[o] > 0.0 ? std::log(prior_[o]) : -std::numeric_limits<double>::infinity();
        for (std::size_t n = 0; n < context.size() && std::isfinite(log_score); ++n) {
            const auto t = layer_type_[n];
            if (context[n] >= entity_counts_[t]) throw std::out_of_range("entity index out of range");
            const double joint = joint_[t][std::size_t{context[n]} * outputs + o];
            log_score += std::log((joint + 1.0) / (output_totals_[t][o] + static_cast<double>(entity_counts_[t])));
        }
        out[o] = log_score;
        best = std::max(best, log_score);
    }
    double sum = 0.0;
    for (auto& v : out) {
        v = std::isfinite(v) ? std::exp(v - best) : 0.0;
        sum += v;
    }
    for (auto& v : out) v /= sum;
}

NaiveBayesBaseline baseline_naive_bayes(const Dataset& train) { return NaiveBayesBaseline(train); }

ScoredPredictions score_dataset(const Scorer& scorer, const Dataset& test) {
    ScoredPredictions preds;
    preds.rows.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto obs = test[i];
        ScoredRow row;
        row.truth = obs.output;
        row.weight = static_cast<double>(obs.count);
        row.scores.assign(scorer.outputs(), 0.0);
        scorer.score(obs.context, row.scores);
        preds.rows.push_back(std::move(row));
    }
    return preds;
}

MetricReport evaluate(const Scorer& scorer, const Dataset& test) {
    return compute_metrics(score_dataset(scorer, test), scorer.outputs());
}

MetricReport evaluate_model(const Model& model, const Dataset& test) {
    return evaluate(ModelScorer(model), test);
}

std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("train_fraction must lie in (0, 1)");
    const std::uint64_t total = data.total_weight();
    const auto n_train = static_cast<std::uint64_t>(std::llround(train_fraction * static_cast<double>(total)));
    if (n_train == 0 || n_train >= total)
        throw std::invalid_argument("split leaves one side empty (|R°| = " + std::to_string(total) + ")");

    std::vector<std::uint32_t> units;
    units.reserve(total);
    for (std::size_t i = 0; i < data.size(); ++i) units.insert(units.end(), data[i].count, static_cast<std::uint32_t>(i));
    std::mt19937_64 rng(seed);
    std::shuffle(units.begin(), units.end(), rng);

    std::vector<std::uint64_t> train_counts(data.size(), 0);
    for (std::uint64_t u = 0; u < n_train; ++u) ++train_counts[units[u]];
    std::vector<Observation> train;
    std::vector<Observation> test;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto obs = data[i];
        Observation base{{obs.context.begin(), obs.context.end()}, obs.output, 0};
        if (train_counts[i] > 0) {
            base.count = train_counts[i];
            train.push_back(base);
        }
        if (train_counts[i] < obs.count) {
            base.count = obs.count - train_counts[i];
            test.push_back(base);
        }
    }
    return {Dataset(data.spec(), train), Dataset(data.spec(), test)};
}

MetricSummary summarize(std::span<const MetricReport> runs) {
    MetricSummary summary;
    summary.runs = runs.size();
    if (runs.empty()) return summary;
    auto fields = [](MetricReport& r) {
        return std::array<double*, 6>{&r.f1_max, &r.p_at_1, &r.auc_roc_weighted, &r.auc_pr_weighted,
                                      &r.rank_avg_precision, &r.coverage_error_normalized};
    };
    auto mean = fields(summary.mean);
    auto se = fields(summary.standard_error);
    const double n = static_cast<double>(runs.size());
    for (std::size_t f = 0; f < 6; ++f) {
        double sum = 0.0;
        for (auto run : runs) sum += *fields(run)[f];
        const double mu = sum / n;
        double sq = 0.0;
        for (auto run : runs) sq += (*fields(run)[f] - mu) * (*fields(run)[f] - mu);
        *mean[f] = mu;
        *se[f] = runs.size() > 1 ? std::sqrt(sq / (n - 1.0)) / std::sqrt(n) : 0.0;
    }
    return summary;
}

} // namespace simsbm
