#include "simsbm/model.hpp"

#include "assignment_kernel.hpp"
#include "simsbm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace simsbm {

RowStore RowStore::dense(std::uint64_t keys, std::size_t width, double fill) {
    RowStore store;
    store.width_ = width;
    store.dense_ = true;
    store.values_.assign(keys * width, fill);
    return store;
}

RowStore RowStore::sparse(std::size_t width) {
    RowStore store;
    store.width_ = width;
    store.dense_ = false;
    return store;
}

double* RowStore::insert(std::uint64_t key, double fill) {
    if (dense_) return values_.data() + key * width_;
    const auto [it, inserted] = slots_.try_emplace(key, values_.size());
    if (inserted) {
        values_.resize(values_.size() + width_, fill);
        keys_.push_back(key);
    }
    return values_.data() + it->second;
}

void RowStore::add(const RowStore& other) {
    if (other.width_ != width_ || other.dense_ != dense_)
        throw std::invalid_argument("RowStore::add: incompatible stores");
    if (dense_) {
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
        return;
    }
    other.for_each([&](std::uint64_t key, std::span<const double> row) {
        double* dst = insert(key);
        for (std::size_t i = 0; i < width_; ++i) dst[i] += row[i];
    });
}

bool RowStore::operator==(const RowStore& other) const {
    if (width_ != other.width_ || dense_ != other.dense_ || stored() != other.stored()) return false;
    if (dense_) return values_ == other.values_;
    bool equal = true;
    for_each([&](std::uint64_t key, std::span<const double> row) {
        const double* theirs = other.find(key);
        if (!theirs || !std::equal(row.begin(), row.end(), theirs)) equal = false;
    });
    return equal;
}

bool use_dense_storage(const Layout& layout) {
    const auto keys = layout.canonical_count();
    return keys <= kDenseCellLimit / std::max<std::size_t>(layout.output_count(), 1);
}

ClusterTensor::ClusterTensor(std::shared_ptr<const Layout> layout, RowStore rows)
    : layout_(std::move(layout)), rows_(std::move(rows)) {
    const auto outputs = layout_->output_count();
    if (rows_.width() != outputs) throw SpecError("tensor row width does not match output_count");
    if (rows_.is_dense() && rows_.stored() != layout_->canonical_count())
        throw SpecError("dense tensor does not cover every canonical assignment");
    fallback_.assign(outputs, 1.0 / static_cast<double>(outputs));
}

ClusterTensor ClusterTensor::uniform(std::shared_ptr<const Layout> layout) {
    const auto outputs = layout->output_count();
    const double u = 1.0 / static_cast<double>(outputs);
    RowStore rows = use_dense_storage(*layout) ? RowStore::dense(layout->canonical_count(), outputs, u)
                                               : RowStore::sparse(outputs);
    return ClusterTensor(std::move(layout), std::move(rows));
}

Model::Model(std::shared_ptr<const Layout> layout, ModelSpec spec,
             std::vector<MembershipMatrix> memberships, ClusterTensor tensor)
    : layout_(std::move(layout)), spec_(std::move(spec)), memberships_(std::move(memberships)),
      tensor_(std::move(tensor)) {
    if (!layout_) layout_ = std::make_shared<const Layout>(spec_);
    if (memberships_.size() != spec_.types.size())
        throw SpecError("expected one membership matrix per type");
    for (std::size_t t = 0; t < spec_.types.size(); ++t) {
        const auto& type = spec_.types[t];
        const auto& theta = memberships_[t];
        if (theta.type_name() != type.name || theta.entities() != type.entity_count ||
            theta.clusters() != type.cluster_count)
            throw SpecError("membership matrix for '" + type.name + "' does not match the spec");
    }
    if (tensor_.outputs() != spec_.output_count || tensor_.dims().size() != spec_.layers.size())
        throw SpecError("cluster tensor does not match the spec");
}

Model::Model(ModelSpec spec, std::vector<MembershipMatrix> memberships, ClusterTensor tensor)
    : Model(nullptr, std::move(spec), std::move(memberships), std::move(tensor)) {}

std::vector<std::string> normalization_violations(const Model& model, double tol) {
    std::vector<std::string> out;
    auto check = [&](std::span<const double> row, const std::string& what) {
        double sum = 0.0;
        for (double v : row) {
            if (!(v >= 0.0 && v <= 1.0)) {
                out.push_back(what + ": entry outside [0, 1]");
                return;
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > tol) {
            std::ostringstream msg;
            msg.precision(17);
            msg << what << ": sums to " << sum;
            out.push_back(msg.str());
        }
    };
    for (const auto& theta : model.memberships()) {
        for (std::size_t m = 0; m < theta.entities(); ++m)
            check(theta.row(m), "theta[" + theta.type_name() + "][" + std::to_string(m) + "]");
    }
    model.tensor().rows().for_each([&](std::uint64_t key, std::span<const double> row) {
        check(row, "p[" + std::to_string(key) + "]");
    });
    return out;
}

void predict_into(const Model& model, std::span<const std::uint32_t> context, std::span<double> out) {
    std::vector<const double*> rows;
    detail::gather_rows(model, context, rows);
    std::fill(out.begin(), out.end(), 0.0);
    const auto& tensor = model.tensor();
    const auto outputs = out.size();
    detail::for_each_assignment(
        model.layout(), rows,
        [&](std::uint64_t, std::uint64_t canonical, std::span<const std::uint32_t>, double weight) {
            if (weight == 0.0) return;
            const auto p = tensor.row(canonical);
            for (std::size_t o = 0; o < outputs; ++o) out[o] += weight * p[o];
        });
}

std::vector<double> predict(const Model& model, std::span<const std::uint32_t> context) {
    std::vector<double> out(model.spec().output_count, 0.0);
    predict_into(model, context, out);
    return out;
}

double log_likelihood(const Model& model, const Dataset& data) {
    std::vector<const double*> rows;
    const auto& tensor = model.tensor();
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto obs = data[i];
        detail::gather_rows(model, obs.context, rows);
        double prob = 0.0;
        detail::for_each_assignment(
            model.layout(), rows,
            [&](std::uint64_t, std::uint64_t canonical, std::span<const std::uint32_t>, double weight) {
                prob += weight * tensor.row(canonical)[obs.output];
            });
        total += static_cast<double>(obs.count) * std::log(std::max(prob, kProbabilityFloor));
    }
    return total;
}

} // namespace simsbm
