#pragma once

#include "simsbm/dataset.hpp"
#include "simsbm/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace simsbm {

/// One scored test row. `weight` is the observation count; a row of weight w
/// counts exactly like w identical rows of weight 1.
struct ScoredRow {
    std::uint32_t truth = 0;
    std::vector<double> scores;
    double weight = 1.0;
};

struct ScoredPredictions {
    std::vector<ScoredRow> rows;
};

struct MetricReport {
    double f1_max = 0.0;
    double p_at_1 = 0.0;
    double auc_roc_weighted = 0.0;
    double auc_pr_weighted = 0.0;
    double rank_avg_precision = 0.0;
    /// Lower is better.
    double coverage_error_normalized = 0.0;
    /// e.g. classes whose AUC is undefined and was left out.
    std::vector<std::string> warnings;
};

/// (name, value) pairs in a fixed order, for reports.
std::vector<std::pair<std::string, double>> metric_fields(const MetricReport& report);

/// Multiclass ranking metrics, per-class averages weighted by true-instance
/// counts. Ranks are competition ranks: 1 + number of strictly greater scores.
/// Throws std::invalid_argument for an empty table or a malformed row.
MetricReport compute_metrics(const ScoredPredictions& preds, std::size_t outputs);

/// Anything that maps a context to a distribution over outputs.
class Scorer {
  public:
    virtual ~Scorer() = default;
    virtual std::size_t outputs() const = 0;
    virtual void score(std::span<const std::uint32_t> context, std::span<double> out) const = 0;
};

class ModelScorer final : public Scorer {
  public:
    explicit ModelScorer(const Model& model) : model_(model) {}
    std::size_t outputs() const override { return model_.spec().output_count; }
    void score(std::span<const std::uint32_t> context, std::span<double> out) const override {
        predict_into(model_, context, out);
    }

  private:
    const Model& model_;
};

/// Context-free scorer: empirical output frequencies of the training set.
class FrequencyBaseline final : public Scorer {
  public:
    explicit FrequencyBaseline(std::vector<double> frequencies) : frequencies_(std::move(frequencies)) {}
    std::size_t outputs() const override { return frequencies_.size(); }
    void score(std::span<const std::uint32_t>, std::span<double> out) const override;
    std::span<const double> frequencies() const { return frequencies_; }

  private:
    std::vector<double> frequencies_;
};

/// P(o | f) proportional to P(o) prod_n P(f_n | o), with add-one smoothing of
/// each per-type entity|output table. Same-type layers share one table.
class NaiveBayesBaseline final : public Scorer {
  public:
    explicit NaiveBayesBaseline(const Dataset& train);
    std::size_t outputs() const override { return prior_.size(); }
    void score(std::span<const std::uint32_t> context, std::span<double> out) const override;

  private:
    std::vector<double> prior_;
    std::vector<std::size_t> layer_type_;
    std::vector<std::size_t> entity_counts_;
    /// Per type: entities x outputs co-occurrence counts.
    std::vector<std::vector<double>> joint_;
    /// Per type, per output: total entity occurrences.
    std::vector<std::vector<double>> output_totals_;
};

/// Throws std::invalid_argument on an empty training set.
FrequencyBaseline baseline_frequency(const Dataset& train);
NaiveBayesBaseline baseline_naive_bayes(const Dataset& train);

ScoredPredictions score_dataset(const Scorer& scorer, const Dataset& test);
MetricReport evaluate(const Scorer& scorer, const Dataset& test);
MetricReport evaluate_model(const Model& model, const Dataset& test);

/// Partition the |R°| observation units into train/test sides: exactly
/// round(train_fraction * |R°|) units, drawn uniformly without replacement,
/// go to train. Throws std::invalid_argument if either side ends up empty.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed);

/// Mean and standard error (sample sd / sqrt(n)) per metric over runs.
struct MetricSummary {
    MetricReport mean;
    MetricReport standard_error;
    std::size_t runs = 0;
};
MetricSummary summarize(std::span<const MetricReport> runs);

} // namespace simsbm
