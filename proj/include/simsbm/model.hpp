#pragma once

#include "simsbm/dataset.hpp"
#include "simsbm/model_spec.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace simsbm {

/// Probabilities are clamped below at this value before taking logarithms.
inline constexpr double kProbabilityFloor = 1e-12;

/// Dense tensors above this many cells (canonical keys x outputs) switch to
/// sparse storage.
inline constexpr std::uint64_t kDenseCellLimit = 10'000'000;

/// Entity-to-cluster probabilities for one type; rows lie on the simplex.
class MembershipMatrix {
  public:
    MembershipMatrix() = default;
    MembershipMatrix(std::string type_name, std::size_t entities, std::size_t clusters,
                     double fill = 0.0)
        : type_name_(std::move(type_name)), rows_(entities), cols_(clusters),
          values_(entities * clusters, fill) {}

    const std::string& type_name() const { return type_name_; }
    std::size_t entities() const { return rows_; }
    std::size_t clusters() const { return cols_; }

    std::span<const double> row(std::size_t m) const {
        return std::span<const double>(values_).subspan(m * cols_, cols_);
    }
    std::span<double> row(std::size_t m) {
        return std::span<double>(values_).subspan(m * cols_, cols_);
    }
    double operator()(std::size_t m, std::size_t k) const { return values_[m * cols_ + k]; }
    double& operator()(std::size_t m, std::size_t k) { return values_[m * cols_ + k]; }
    std::span<const double> values() const { return values_; }

    bool operator==(const MembershipMatrix&) const = default;

  private:
    std::string type_name_;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

/// Fixed-width rows keyed by canonical index. Dense stores every key in
/// order; sparse stores only inserted keys, in insertion order.
class RowStore {
  public:
    RowStore() = default;
    static RowStore dense(std::uint64_t keys, std::size_t width, double fill = 0.0);
    static RowStore sparse(std::size_t width);

    bool is_dense() const { return dense_; }
    std::size_t width() const { return width_; }
    /// Number of materialized rows.
    std::size_t stored() const { return dense_ ? values_.size() / std::max<std::size_t>(width_, 1) : keys_.size(); }

    /// nullptr when a sparse store has no row for `key`.
    const double* find(std::uint64_t key) const {
        if (dense_) return values_.data() + key * width_;
        const auto it = slots_.find(key);
        return it == slots_.end() ? nullptr : values_.data() + it->second;
    }
    /// Row for `key`, creating a `fill`-initialized one when absent.
    double* insert(std::uint64_t key, double fill = 0.0);

    /// Visits (key, row) in storage order.
    template <class Fn> void for_each(Fn&& fn) const {
        if (dense_) {
            const std::uint64_t n = stored();
            for (std::uint64_t key = 0; key < n; ++key)
                fn(key, std::span<const double>(values_.data() + key * width_, width_));
        } else {
            for (std::size_t i = 0; i < keys_.size(); ++i)
                fn(keys_[i], std::span<const double>(values_.data() + i * width_, width_));
        }
    }
    template <class Fn> void for_each_mutable(Fn&& fn) {
        if (dense_) {
            const std::uint64_t n = stored();
            for (std::uint64_t key = 0; key < n; ++key)
                fn(key, std::span<double>(values_.data() + key * width_, width_));
        } else {
            for (std::size_t i = 0; i < keys_.size(); ++i)
                fn(keys_[i], std::span<double>(values_.data() + i * width_, width_));
        }
    }

    /// Element-wise sum; both stores must share width and mode.
    void add(const RowStore& other);

    bool operator==(const RowStore& other) const;

  private:
    std::size_t width_ = 0;
    bool dense_ = true;
    std::vector<double> values_;
    std::unordered_map<std::uint64_t, std::size_t> slots_;
    std::vector<std::uint64_t> keys_;
};

/// True when the tensor for `layout` is stored densely.
bool use_dense_storage(const Layout& layout);

/// p: one output distribution per canonical cluster assignment. Lookups with a
/// non-canonical assignment redirect to its canonical key, so the tensor is
/// symmetric within same-type groups by construction. Sparse tensors return
/// the uniform distribution for keys they do not store.
class ClusterTensor {
  public:
    ClusterTensor() = default;
    ClusterTensor(std::shared_ptr<const Layout> layout, RowStore rows);

    static ClusterTensor uniform(std::shared_ptr<const Layout> layout);

    std::span<const double> row(std::uint64_t canonical) const {
        const double* r = rows_.find(canonical);
        return {r ? r : fallback_.data(), fallback_.size()};
    }
    std::span<const double> at(std::span<const std::uint32_t> clusters) const {
        return row(layout_->canonical_index(clusters));
    }

    const RowStore& rows() const { return rows_; }
    bool is_dense() const { return rows_.is_dense(); }
    std::size_t outputs() const { return fallback_.size(); }
    std::span<const std::size_t> dims() const { return layout_->layer_clusters(); }

    bool operator==(const ClusterTensor& other) const { return rows_ == other.rows_; }

  private:
    std::shared_ptr<const Layout> layout_;
    RowStore rows_;
    std::vector<double> fallback_;
};

/// Fitted (or initial) SIMSBM parameters. Immutable once built.
class Model {
  public:
    Model() = default;
    /// Checks shapes against the spec; throws SpecError on mismatch.
    Model(std::shared_ptr<const Layout> layout, ModelSpec spec,
          std::vector<MembershipMatrix> memberships, ClusterTensor tensor);
    Model(ModelSpec spec, std::vector<MembershipMatrix> memberships, ClusterTensor tensor);

    const ModelSpec& spec() const { return spec_; }
    const Layout& layout() const { return *layout_; }
    const std::shared_ptr<const Layout>& layout_ptr() const { return layout_; }
    const std::vector<MembershipMatrix>& memberships() const { return memberships_; }
    const MembershipMatrix& membership(std::size_t t) const { return memberships_[t]; }
    const ClusterTensor& tensor() const { return tensor_; }

    double theta(std::size_t type, std::size_t entity, std::size_t cluster) const {
        return memberships_[type](entity, cluster);
    }
    double p(std::span<const std::uint32_t> clusters, std::size_t output) const {
        return tensor_.at(clusters)[output];
    }

    bool operator==(const Model& other) const {
        return spec_ == other.spec_ && memberships_ == other.memberships_ && tensor_ == other.tensor_;
    }

  private:
    std::shared_ptr<const Layout> layout_;
    ModelSpec spec_;
    std::vector<MembershipMatrix> memberships_;
    ClusterTensor tensor_;
};

/// Rows (theta rows and tensor rows) whose sum is off by more than `tol` or
/// that hold entries outside [0, 1]. Empty when the model is normalized.
std::vector<std::string> normalization_violations(const Model& model, double tol);

/// P(o | context) for every output. Throws std::out_of_range for bad indices.
std::vector<double> predict(const Model& model, std::span<const std::uint32_t> context);
void predict_into(const Model& model, std::span<const std::uint32_t> context, std::span<double> out);

/// Sum over observations of count * log P(o | context), probabilities floored.
double log_likelihood(const Model& model, const Dataset& data);

} // namespace simsbm
