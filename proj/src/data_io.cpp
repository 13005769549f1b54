#include "simsbm/data_io.hpp"

#include "simsbm/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <optional>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace simsbm {

using nlohmann::json;

TokenTable::TokenTable(std::vector<std::string> tokens) {
    for (const auto& t : tokens) {
        if (find(t)) throw DataError("duplicate token '" + t + "' in vocabulary");
        add(t);
    }
}

std::uint32_t TokenTable::add(const std::string& token) {
    const auto [it, inserted] = index_.try_emplace(token, static_cast<std::uint32_t>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
}

std::optional<std::uint32_t> TokenTable::find(const std::string& token) const {
    const auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::size_t Vocabulary::type_index(const std::string& name) const {
    for (std::size_t t = 0; t < type_names.size(); ++t) {
        if (type_names[t] == name) return t;
    }
    return ModelSpec::npos;
}

namespace {

struct Header {
    std::vector<std::string> layers;
    bool count_column = false;
};

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return fields;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line) + ": ";
}

Header parse_header(const std::string& line, const std::filesystem::path& path, std::size_t line_no) {
    std::istringstream in(line);
    std::string word;
    in >> word;
    if (word != "#types") throw DataError(where(path, line_no) + "expected header starting with '#types'");
    std::vector<std::string> words;
    while (in >> word) words.push_back(word);
    Header header;
    if (!words.empty() && words.back() == "count") {
        header.count_column = true;
        words.pop_back();
    }
    if (words.empty() || words.back() != "out")
        throw DataError(where(path, line_no) + "header must end with the output column 'out'");
    words.pop_back();
    if (words.empty()) throw DataError(where(path, line_no) + "header declares no input layers");
    header.layers = std::move(words);
    return header;
}

/// Calls on_header once, then on_row(fields, count) for every data row.
template <class OnHeader, class OnRow>
void read_tuple_file(const std::filesystem::path& path, OnHeader&& on_header, OnRow&& on_row) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
    std::string line;
    std::size_t line_no = 0;
    std::optional<Header> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!header) {
            if (line.empty()) continue;
            header = parse_header(line, path, line_no);
            on_header(*header, line_no);
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        auto fields = split_tabs(line);
        const std::size_t expected = header->layers.size() + 1 + (header->count_column ? 1 : 0);
        if (fields.size() != expected)
            throw DataError(where(path, line_no) + "expected " + std::to_string(expected) + " fields, found " +
                            std::to_string(fields.size()));
        std::uint64_t count = 1;
        if (header->count_column) {
            const auto& text = fields.back();
            const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), count);
            if (ec != std::errc{} || ptr != text.data() + text.size() || count == 0)
                throw DataError(where(path, line_no) + "invalid count '" + text + "'");
            fields.pop_back();
        }
        on_row(fields, count);
    }
    if (!header) throw DataError("dataset '" + path.string() + "' has no '#types' header");
}

std::size_t cluster_count_for(const std::map<std::string, std::size_t>& clusters, const std::string& type) {
    const auto it = clusters.find(type);
    return it == clusters.end() ? 1 : it->second;
}

} // namespace

LoadedDataset load_dataset(const std::filesystem::path& path, const std::map<std::string, std::size_t>& clusters) {
    LoadedDataset result;
    auto& vocab = result.vocab;
    std::vector<std::size_t> layer_type;
    std::vector<std::string> layers;
    std::vector<Observation> raw;
    read_tuple_file(
        path,
        [&](const Header& header, std::size_t) {
            layers = header.layers;
            result.count_column = header.count_column;
            for (const auto& name : header.layers) {
                auto t = vocab.type_index(name);
                if (t == ModelSpec::npos) {
                    t = vocab.type_names.size();
                    vocab.type_names.push_back(name);
                    vocab.entities.emplace_back();
                }
                layer_type.push_back(t);
            }
        },
        [&](const std::vector<std::string>& fields, std::uint64_t count) {
            Observation obs;
            obs.count = count;
            for (std::size_t n = 0; n + 1 < fields.size(); ++n)
                obs.context.push_back(vocab.entities[layer_type[n]].add(fields[n]));
            obs.output = vocab.outputs.add(fields.back());
            raw.push_back(std::move(obs));
        });

    // A header-only file still yields an empty dataset with a valid spec.
    const bool empty = raw.empty();
    ModelSpec spec;
    spec.layers = layers;
    for (std::size_t t = 0; t < vocab.type_names.size(); ++t) {
        const auto& name = vocab.type_names[t];
        spec.types.push_back({name, empty ? 1 : vocab.entities[t].size(), cluster_count_for(clusters, name)});
    }
    // Fewer than two distinct outputs is padded so the rows stay representable;
    // fitting such data is refused by the caller.
    spec.output_count = std::max<std::size_t>(2, vocab.outputs.size());
    result.data = Dataset(std::move(spec), raw);
    return result;
}

LoadedDataset load_dataset(const std::filesystem::path& path, const Vocabulary& vocab,
                           const std::map<std::string, std::size_t>& clusters) {
    LoadedDataset result;
    result.vocab = vocab;
    std::vector<std::size_t> layer_type;
    std::vector<std::string> layers;
    std::vector<Observation> raw;
    read_tuple_file(
        path,
        [&](const Header& header, std::size_t line_no) {
            layers = header.layers;
            result.count_column = header.count_column;
            for (const auto& name : header.layers) {
                const auto t = vocab.type_index(name);
                if (t == ModelSpec::npos)
                    throw DataError(where(path, line_no) + "type '" + name + "' is not in the model vocabulary");
                layer_type.push_back(t);
            }
        },
        [&](const std::vector<std::string>& fields, std::uint64_t count) {
            Observation obs;
            obs.count = count;
            for (std::size_t n = 0; n + 1 < fields.size(); ++n) {
                const auto index = vocab.entities[layer_type[n]].find(fields[n]);
                if (!index) {
                    ++result.skipped_rows;
                    return;
                }
                obs.context.push_back(*index);
            }
            const auto output = vocab.outputs.find(fields.back());
            if (!output) {
                ++result.skipped_rows;
                return;
            }
            obs.output = *output;
            raw.push_back(std::move(obs));
        });

    ModelSpec spec;
    spec.layers = layers;
    for (std::size_t t = 0; t < vocab.type_names.size(); ++t) {
        spec.types.push_back({vocab.type_names[t], vocab.entities[t].size(),
                              cluster_count_for(clusters, vocab.type_names[t])});
    }
    spec.output_count = vocab.outputs.size();
    result.data = Dataset(std::move(spec), raw);
    return result;
}

void save_dataset(const Dataset& data, const Vocabulary& vocab, const std::filesystem::path& path,
                  bool count_column) {
    const auto& spec = data.spec();
    std::vector<std::size_t> layer_vocab;
    for (const auto& layer : spec.layers) {
        const auto t = vocab.type_index(layer);
        if (t == ModelSpec::npos) throw DataError("vocabulary has no type '" + layer + "'");
        layer_vocab.push_back(t);
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << "#types";
    for (const auto& layer : spec.layers) out << '\t' << layer;
    out << "\tout" << (count_column ? "\tcount" : "") << '\n';
    std::string line;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto obs = data[i];
        line.clear();
        for (std::size_t n = 0; n < obs.context.size(); ++n) {
            line += vocab.entities[layer_vocab[n]].token(obs.context[n]);
            line += '\t';
        }
        line += vocab.outputs.token(obs.output);
        if (count_column) {
            out << line << '\t' << obs.count << '\n';
        } else {
            for (std::uint64_t c = 0; c < obs.count; ++c) out << line << '\n';
        }
    }
    if (!out) throw DataError("failed writing '" + path.string() + "'");
}

namespace {

/// All size-k subsets of {0..n-1}, lexicographic.
std::vector<std::vector<std::size_t>> combinations(std::size_t n, std::size_t k) {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> pick(k);
    for (std::size_t i = 0; i < k; ++i) pick[i] = i;
    if (k > n) return out;
    while (true) {
        out.push_back(pick);
        std::size_t i = k;
        while (i > 0 && pick[i - 1] == n - k + i - 1) --i;
        if (i == 0) break;
        ++pick[i - 1];
        for (std::size_t j = i; j < k; ++j) pick[j] = pick[j - 1] + 1;
    }
    return out;
}

std::vector<std::size_t> positions_of(const ModelSpec& spec, const std::string& type) {
    std::vector<std::size_t> out;
    for (std::size_t n = 0; n < spec.layers.size(); ++n) {
        if (spec.layers[n] == type) out.push_back(n);
    }
    return out;
}

} // namespace

Dataset expand_lower_order(const Dataset& data, const ModelSpec& from, const ModelSpec& to) {
    require_valid(to);
    if (!same_data_shape(from, data.spec()) && !data.empty())
        throw SpecError("dataset does not match the source spec " + from.notation());

    struct Group {
        std::vector<std::size_t> from_positions;
        std::vector<std::size_t> to_positions;
        std::vector<std::vector<std::size_t>> picks;
    };
    std::vector<Group> groups;
    for (const auto& type : to.types) {
        const auto source = from.type_index(type.name);
        Group g;
        g.to_positions = positions_of(to, type.name);
        if (g.to_positions.empty()) continue;
        if (source == ModelSpec::npos) throw SpecError("type '" + type.name + "' does not exist in the source data");
        if (from.types[source].entity_count != type.entity_count)
            throw SpecError("type '" + type.name + "' has a different entity count in the target spec");
        g.from_positions = positions_of(from, type.name);
        if (g.to_positions.size() > g.from_positions.size())
            throw SpecError("cannot raise the multiplicity of type '" + type.name + "' from " +
                            std::to_string(g.from_positions.size()) + " to " +
                            std::to_string(g.to_positions.size()));
        g.picks = combinations(g.from_positions.size(), g.to_positions.size());
        groups.push_back(std::move(g));
    }
    if (to.output_count != from.output_count) throw SpecError("target spec changes the output count");

    std::vector<Observation> expanded;
    std::vector<std::size_t> choice(groups.size(), 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto obs = data[i];
        std::fill(choice.begin(), choice.end(), 0);
        while (true) {
            Observation out;
            out.context.assign(to.layers.size(), 0);
            out.output = obs.output;
            out.count = obs.count;
            for (std::size_t g = 0; g < groups.size(); ++g) {
                const auto& pick = groups[g].picks[choice[g]];
                for (std::size_t j = 0; j < pick.size(); ++j)
                    out.context[groups[g].to_positions[j]] = obs.context[groups[g].from_positions[pick[j]]];
            }
            expanded.push_back(std::move(out));
            std::size_t g = groups.size();
            while (g > 0 && ++choice[g - 1] == groups[g - 1].picks.size()) {
                choice[g - 1] = 0;
                --g;
            }
            if (g == 0) break;
        }
    }
    return Dataset(to, expanded);
}

ModelSpec reduced_spec(const ModelSpec& data_spec, const std::map<std::string, std::size_t>& multiplicity,
                       const std::map<std::string, std::size_t>& clusters) {
    const auto available = data_spec.multiplicities();
    for (const auto& [name, m] : multiplicity) {
        const auto t = data_spec.type_index(name);
        if (t == ModelSpec::npos) throw SpecError("type '" + name + "' does not appear in the data");
        if (m > available[t])
            throw SpecError("type '" + name + "' has multiplicity " + std::to_string(available[t]) +
                            " in the data; cannot use " + std::to_string(m));
    }
    ModelSpec spec;
    spec.output_count = data_spec.output_count;
    for (const auto& type : data_spec.types) {
        const auto it = multiplicity.find(type.name);
        if (it == multiplicity.end() || it->second == 0) continue;
        spec.types.push_back({type.name, type.entity_count, cluster_count_for(clusters, type.name)});
    }
    std::map<std::string, std::size_t> taken;
    for (const auto& layer : data_spec.layers) {
        const auto it = multiplicity.find(layer);
        if (it == multiplicity.end()) continue;
        if (taken[layer] < it->second) {
            spec.layers.push_back(layer);
            ++taken[layer];
        }
    }
    return spec;
}

void save_model(const Model& model, const Vocabulary* vocab, const std::filesystem::path& path) {
    const auto& spec = model.spec();
    const auto& layout = model.layout();
    json doc;
    doc["format"] = "simsbm-model";
    doc["version"] = kModelFormatVersion;
    json types = json::array();
    for (const auto& t : spec.types)
        types.push_back({{"name", t.name}, {"entities", t.entity_count}, {"clusters", t.cluster_count}});
    doc["spec"] = {{"types", types}, {"layers", spec.layers}, {"outputs", spec.output_count}};
    doc["storage"] = model.tensor().is_dense() ? "dense" : "sparse";

    json theta = json::object();
    for (const auto& m : model.memberships()) {
        json rows = json::array();
        for (std::size_t e = 0; e < m.entities(); ++e) {
            const auto row = m.row(e);
            rows.push_back(std::vector<double>(row.begin(), row.end()));
        }
        theta[m.type_name()] = std::move(rows);
    }
    doc["theta"] = std::move(theta);

    std::vector<std::uint64_t> keys;
    model.tensor().rows().for_each([&](std::uint64_t key, std::span<const double>) { keys.push_back(key); });
    std::sort(keys.begin(), keys.end());
    json tensor = json::array();
    for (auto key : keys) {
        const auto row = model.tensor().row(key);
        tensor.push_back({{"key", layout.canonical_key(key)}, {"p", std::vector<double>(row.begin(), row.end())}});
    }
    doc["tensor"] = std::move(tensor);

    if (vocab) {
        json v = json::object();
        json entity_tokens = json::object();
        for (std::size_t t = 0; t < vocab->type_names.size(); ++t)
            entity_tokens[vocab->type_names[t]] = vocab->entities[t].tokens();
        v["entities"] = std::move(entity_tokens);
        v["outputs"] = vocab->outputs.tokens();
        doc["vocabulary"] = std::move(v);
    }

    std::ofstream out(path);
    if (!out) throw DataError("cannot write model file '" + path.string() + "'");
    out << doc.dump(1) << '\n';
    if (!out) throw DataError("failed writing model file '" + path.string() + "'");
}

LoadedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file '" + path.string() + "'");
    const std::string prefix = "model file '" + path.string() + "': ";
    try {
        const json doc = json::parse(in);
        if (doc.value("format", std::string{}) != "simsbm-model") throw DataError(prefix + "not a simsbm model file");
        const int version = doc.at("version").get<int>();
        if (version != kModelFormatVersion)
            throw DataError(prefix + "unsupported format version " + std::to_string(version) + " (expected " +
                            std::to_string(kModelFormatVersion) + ")");

        ModelSpec spec;
        for (const auto& t : doc.at("spec").at("types"))
            spec.types.push_back(
                {t.at("name").get<std::string>(), t.at("entities").get<std::size_t>(), t.at("clusters").get<std::size_t>()});
        spec.layers = doc.at("spec").at("layers").get<std::vector<std::string>>();
        spec.output_count = doc.at("spec").at("outputs").get<std::size_t>();
        const auto violations = validate_spec(spec);
        if (!violations.empty()) throw DataError(prefix + "invalid spec: " + violations.front());
        auto layout = std::make_shared<const Layout>(spec);

        std::vector<MembershipMatrix> memberships;
        const auto& theta = doc.at("theta");
        for (const auto& type : spec.types) {
            const auto& rows = theta.at(type.name);
            if (rows.size() != type.entity_count)
                throw DataError(prefix + "theta for '" + type.name + "' has the wrong number of rows");
            MembershipMatrix m(type.name, type.entity_count, type.cluster_count);
            for (std::size_t e = 0; e < type.entity_count; ++e) {
                const auto values = rows[e].get<std::vector<double>>();
                if (values.size() != type.cluster_count)
                    throw DataError(prefix + "theta row for '" + type.name + "' has the wrong width");
                std::copy(values.begin(), values.end(), m.row(e).begin());
            }
            memberships.push_back(std::move(m));
        }

        const bool dense = doc.at("storage").get<std::string>() == "dense";
        if (dense != use_dense_storage(*layout)) throw DataError(prefix + "storage mode does not match the spec size");
        RowStore rows = dense ? RowStore::dense(layout->canonical_count(), spec.output_count, -1.0)
                              : RowStore::sparse(spec.output_count);
        std::uint64_t seen = 0;
        for (const auto& entry : doc.at("tensor")) {
            const auto key = entry.at("key").get<std::vector<std::uint32_t>>();
            if (key.size() != spec.layers.size()) throw DataError(prefix + "tensor key has the wrong length");
            for (std::size_t n = 0; n < key.size(); ++n) {
                if (key[n] >= layout->layer_clusters(n)) throw DataError(prefix + "tensor key out of range");
            }
            const auto index = layout->canonical_index(key);
            if (layout->canonical_key(index) != key) throw DataError(prefix + "tensor key is not canonical");
            const auto p = entry.at("p").get<std::vector<double>>();
            if (p.size() != spec.output_count) throw DataError(prefix + "tensor row has the wrong width");
            if (!dense && rows.find(index)) throw DataError(prefix + "duplicate tensor key");
            double* dst = rows.insert(index);
            if (dense && dst[0] != -1.0) throw DataError(prefix + "duplicate tensor key");
            std::copy(p.begin(), p.end(), dst);
            ++seen;
        }
        if (dense && seen != layout->canonical_count())
            throw DataError(prefix + "dense tensor is missing rows (" + std::to_string(seen) + " of " +
                            std::to_string(layout->canonical_count()) + ")");

        LoadedModel loaded{Model(layout, spec, std::move(memberships), ClusterTensor(layout, std::move(rows))),
                           std::nullopt};
        const auto violations_norm = normalization_violations(loaded.model, 1e-6);
        if (!violations_norm.empty()) throw DataError(prefix + "corrupted normalization: " + violations_norm.front());

        if (doc.contains("vocabulary")) {
            const auto& v = doc.at("vocabulary");
            Vocabulary vocab;
            for (const auto& type : spec.types) {
                vocab.type_names.push_back(type.name);
                vocab.entities.emplace_back(v.at("entities").at(type.name).get<std::vector<std::string>>());
                if (vocab.entities.back().size() != type.entity_count)
                    throw DataError(prefix + "vocabulary for '" + type.name + "' does not match its entity count");
            }
            vocab.outputs = TokenTable(v.at("outputs").get<std::vector<std::string>>());
            if (vocab.outputs.size() != spec.output_count)
                throw DataError(prefix + "output vocabulary does not match the output count");
            loaded.vocab = std::move(vocab);
        }
        return loaded;
    } catch (const json::exception& e) {
        throw DataError(prefix + "malformed or truncated (" + e.what() + ")");
    } catch (const SpecError& e) {
        throw DataError(prefix + e.what());
    }
}

namespace {

json metrics_json(const MetricReport& r) {
    json out = json::object();
    for (const auto& [name, value] : metric_fields(r)) out[name] = std::isnan(value) ? json(nullptr) : json(value);
    return out;
}

} // namespace

void write_metric_report(std::span<const ReportEntry> entries, const std::filesystem::path& text_path,
                         const std::filesystem::path& json_path) {
    std::ofstream text(text_path);
    if (!text) throw DataError("cannot write '" + text_path.string() + "'");
    text.precision(17);
    json doc = json::array();
    for (const auto& entry : entries) {
        json block = {{"name", entry.name}, {"metrics", metrics_json(entry.metrics)}};
        for (const auto& [key, value] : metric_fields(entry.metrics)) text << entry.name << '.' << key << '=' << value << '\n';
        if (entry.standard_error) {
            block["standard_error"] = metrics_json(*entry.standard_error);
            for (const auto& [key, value] : metric_fields(*entry.standard_error))
                text << entry.name << '.' << key << "_stderr=" << value << '\n';
        }
        json extra = json::object();
        for (const auto& [key, value] : entry.extra) {
            extra[key] = value;
            text << entry.name << '.' << key << '=' << value << '\n';
        }
        block["extra"] = std::move(extra);
        block["warnings"] = entry.metrics.warnings;
        doc.push_back(std::move(block));
    }
    std::ofstream js(json_path);
    if (!js) throw DataError("cannot write '" + json_path.string() + "'");
    js << doc.dump(2) << '\n';
}

void write_fit_report(const FitReport& report, const ModelSpec& spec, const std::filesystem::path& path) {
    json doc;
    doc["spec"] = spec.notation();
    doc["selected"] = report.selected;
    json runs = json::array();
    for (const auto& r : report.restarts) {
        runs.push_back({{"seed", r.seed},
                        {"iterations", r.iterations},
                        {"converged", r.converged},
                        {"final_log_likelihood", r.final_log_likelihood()},
                        {"trace", r.trace}});
    }
    doc["restarts"] = std::move(runs);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << doc.dump(1) << '\n';
}

} // namespace simsbm
