#pragma once

#include "simsbm/dataset.hpp"
#include "simsbm/em.hpp"
#include "simsbm/evaluation.hpp"
#include "simsbm/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace simsbm {

/// Bidirectional token <-> dense index map; indices are contiguous from 0.
class TokenTable {
  public:
    TokenTable() = default;
    explicit TokenTable(std::vector<std::string> tokens);

    /// Index of `token`, inserting it if new.
    std::uint32_t add(const std::string& token);
    std::optional<std::uint32_t> find(const std::string& token) const;
    const std::string& token(std::uint32_t index) const { return tokens_[index]; }
    const std::vector<std::string>& tokens() const { return tokens_; }
    std::size_t size() const { return tokens_.size(); }

    bool operator==(const TokenTable& other) const { return tokens_ == other.tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

/// Token tables for every entity type (in spec type order) and the outputs.
struct Vocabulary {
    std::vector<std::string> type_names;
    std::vector<TokenTable> entities;
    TokenTable outputs;

    std::size_t type_index(const std::string& name) const;
    bool operator==(const Vocabulary&) const = default;
};

/// Result of reading a tuple file.
struct LoadedDataset {
    Dataset data;
    Vocabulary vocab;
    /// Header carried a trailing `count` column.
    bool count_column = false;
    /// Rows dropped because a token was missing from a frozen vocabulary.
    std::size_t skipped_rows = 0;
};

/// Reads a tab-separated tuple file.
///
/// The first line is the header `#types <type> ... <type> out [count]`;
/// repeated type names declare same-type layers. Every other line is either
/// blank, a `#` comment, or one observation: one token per layer, the output
/// token, and the multiplicity when the header declares `count`.
///
/// Types, entity counts and the output count are inferred from the tokens;
/// cluster counts come from `clusters` (types missing from it get 1). The
/// output count is at least 2 even if fewer distinct outputs occur, and an
/// empty file gets entity count 1 for every type.
/// Throws DataError with a line number for malformed rows.
LoadedDataset load_dataset(const std::filesystem::path& path,
                           const std::map<std::string, std::size_t>& clusters = {});

/// Same, but maps tokens through a fixed vocabulary. Rows with an unknown
/// token are skipped and counted; header types must exist in `vocab`.
LoadedDataset load_dataset(const std::filesystem::path& path, const Vocabulary& vocab,
                           const std::map<std::string, std::size_t>& clusters = {});

/// Writes the tuple format. With `count_column` false, an observation of
/// count c is written as c identical lines.
void save_dataset(const Dataset& data, const Vocabulary& vocab, const std::filesystem::path& path,
                  bool count_column = true);

/// Replace every observation by all size-m' combinations of the positions of
/// each same-type group (m' = target multiplicity), each inheriting the
/// source count; duplicates merge. `to` must only lower multiplicities.
/// Throws SpecError otherwise.
Dataset expand_lower_order(const Dataset& data, const ModelSpec& from, const ModelSpec& to);

/// Spec with the layers of `data_spec` cut down to the given per-type
/// multiplicities (first occurrences kept, header order preserved) and the
/// given cluster counts. Types absent from `multiplicity` are dropped.
ModelSpec reduced_spec(const ModelSpec& data_spec, const std::map<std::string, std::size_t>& multiplicity,
                       const std::map<std::string, std::size_t>& clusters);

inline constexpr int kModelFormatVersion = 1;

/// Self-describing JSON model file: spec, theta matrices, canonical tensor
/// rows, optional vocabulary, format version.
void save_model(const Model& model, const Vocabulary* vocab, const std::filesystem::path& path);

struct LoadedModel {
    Model model;
    std::optional<Vocabulary> vocab;
};

/// Throws DataError on version mismatch, truncation, bad shapes, or rows
/// whose sum is off by more than 1e-6.
LoadedModel load_model(const std::filesystem::path& path);

/// One named block of a metric report.
struct ReportEntry {
    std::string name;
    MetricReport metrics;
    std::optional<MetricReport> standard_error;
    std::map<std::string, double> extra;
};

/// Flat `name.key=value` text record plus the same content as JSON.
void write_metric_report(std::span<const ReportEntry> entries, const std::filesystem::path& text_path,
                         const std::filesystem::path& json_path);

/// Per-restart seeds, iteration counts, convergence flags and likelihood traces.
void write_fit_report(const FitReport& report, const ModelSpec& spec, const std::filesystem::path& path);

} // namespace simsbm
