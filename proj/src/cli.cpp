#include "simsbm/cli.hpp"

#include "simsbm/data_io.hpp"
#include "simsbm/errors.hpp"
#include "simsbm/evaluation.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>

namespace simsbm::cli {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

std::size_t parse_size(std::string_view text, std::string_view what, std::string_view item) {
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size())
        throw SpecError("bad " + std::string(what) + " in spec item '" + std::string(item) + "'");
    return value;
}

/// Data restricted to the layer layout of `target`, lowering multiplicities
/// by expansion when the data carries more same-type layers than the model.
Dataset conform(const Dataset& data, const ModelSpec& target) {
    if (same_data_shape(data.spec(), target)) {
        if (data.spec().types == target.types) return data;
        std::vector<Observation> rows;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto obs = data[i];
            rows.push_back({{obs.context.begin(), obs.context.end()}, obs.output, obs.count});
        }
        return Dataset(target, rows);
    }
    return expand_lower_order(data, data.spec(), target);
}

Vocabulary restrict_vocab(const Vocabulary& vocab, const ModelSpec& spec) {
    Vocabulary out;
    for (const auto& type : spec.types) {
        out.type_names.push_back(type.name);
        out.entities.push_back(vocab.entities[vocab.type_index(type.name)]);
    }
    out.outputs = vocab.outputs;
    return out;
}

struct Prepared {
    Dataset data;
    Vocabulary vocab;
};

Prepared prepare(const RunConfig& cfg, std::ostream& err) {
    auto loaded = load_dataset(cfg.data, cluster_map(cfg.spec));
    if (loaded.vocab.outputs.size() < 2)
        throw DataError("'" + cfg.data.string() + "' needs at least two distinct outputs to fit a model");
    const auto spec = reduced_spec(loaded.data.spec(), multiplicity_map(cfg.spec), cluster_map(cfg.spec));
    require_valid(spec);
    if (spec.layers != loaded.data.spec().layers)
        err << "expanding " << loaded.data.spec().notation() << " data to " << spec.notation() << '\n';
    Prepared out{conform(loaded.data, spec), restrict_vocab(loaded.vocab, spec)};
    return out;
}

FitConfig with_trace(const RunConfig& cfg, std::ostream& err) {
    FitConfig fit = cfg.fit;
    if (!cfg.quiet) {
        fit.on_iteration = [&err](const IterationEvent& e) {
            err << "restart " << e.restart << " seed " << e.seed << " iter " << e.iteration << " loglik "
                << std::setprecision(12) << e.log_likelihood << " rel " << std::setprecision(4)
                << e.relative_change << '\n';
        };
    }
    return fit;
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

/// Runs `body`, mapping the library's exception types to exit codes.
template <class Body>
int guarded(std::ostream& err, Body&& body) {
    try {
        return body();
    } catch (const SpecError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const FitError& e) {
        err << "error: " << e.what() << '\n';
        return kExitFit;
    }
}

Dataset load_conformed(const std::filesystem::path& path, const Vocabulary& vocab, const ModelSpec& spec,
                       std::ostream& err) {
    auto loaded = load_dataset(path, vocab);
    if (loaded.skipped_rows > 0)
        err << "warning: " << path.string() << ": skipped " << loaded.skipped_rows
            << " rows with tokens unknown to the model\n";
    try {
        return conform(loaded.data, spec);
    } catch (const SpecError& e) {
        throw DataError(path.string() + " does not match the model layout " + spec.notation() + ": " + e.what());
    }
}

ReportEntry baseline_entry(std::string name, const Scorer& scorer, const Dataset& test) {
    return {std::move(name), evaluate(scorer, test), std::nullopt, {}};
}

} // namespace

std::vector<TypeRequest> parse_spec_shorthand(std::string_view text) {
    std::vector<TypeRequest> out;
    std::set<std::string> seen;
    if (trim(text).empty()) throw SpecError("empty spec");
    while (true) {
        const auto comma = text.find(',');
        const auto item = trim(text.substr(0, comma));
        const auto colon = item.find(':');
        if (colon == std::string_view::npos || colon == 0)
            throw SpecError("spec item '" + std::string(item) + "' is not of the form type:multiplicity[@clusters]");
        TypeRequest req;
        req.name = std::string(trim(item.substr(0, colon)));
        auto rest = item.substr(colon + 1);
        const auto at = rest.find('@');
        req.multiplicity = parse_size(trim(rest.substr(0, at)), "multiplicity", item);
        if (at != std::string_view::npos) req.clusters = parse_size(trim(rest.substr(at + 1)), "cluster count", item);
        if (req.multiplicity == 0) throw SpecError("type '" + req.name + "' has multiplicity 0");
        if (req.clusters == 0) throw SpecError("type '" + req.name + "' has cluster count 0");
        if (!seen.insert(req.name).second) throw SpecError("type '" + req.name + "' is listed twice");
        out.push_back(std::move(req));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

std::map<std::string, std::size_t> multiplicity_map(const std::vector<TypeRequest>& types) {
    std::map<std::string, std::size_t> out;
    for (const auto& t : types) out[t.name] = t.multiplicity;
    return out;
}

std::map<std::string, std::size_t> cluster_map(const std::vector<TypeRequest>& types) {
    std::map<std::string, std::size_t> out;
    for (const auto& t : types) out[t.name] = t.clusters;
    return out;
}

int cmd_train(const RunConfig& cfg, std::ostream& err) {
    return guarded(err, [&] {
        validate_fit_config(cfg.fit);
        auto prepared = prepare(cfg, err);
        const auto& spec = prepared.data.spec();
        const auto report = fit(spec, prepared.data, with_trace(cfg, err));
        ensure_dir(cfg.out_dir);
        save_model(report.selected_model(), &prepared.vocab, cfg.out_dir / "model.json");
        write_fit_report(report, spec, cfg.out_dir / "fit_report.json");
        const auto& best = report.restarts[report.selected];
        err << spec.notation() << ": selected restart " << report.selected << " (seed " << best.seed
            << "), log-likelihood " << std::setprecision(12) << best.final_log_likelihood() << '\n';
        return kExitOk;
    });
}

int cmd_evaluate(const EvaluateConfig& cfg, std::ostream& err) {
    return guarded(err, [&] {
        const auto loaded = load_model(cfg.model);
        if (!loaded.vocab) throw DataError("model file '" + cfg.model.string() + "' carries no vocabulary");
        const auto& model = loaded.model;
        const auto test = load_conformed(cfg.test, *loaded.vocab, model.spec(), err);
        if (test.empty()) throw DataError("no usable test observations in '" + cfg.test.string() + "'");

        std::vector<ReportEntry> entries;
        ReportEntry main{"SIMSBM", evaluate_model(model, test), std::nullopt, {}};
        main.extra["log_likelihood"] = log_likelihood(model, test);
        main.extra["observations"] = static_cast<double>(test.total_weight());
        entries.push_back(std::move(main));
        if (cfg.train) {
            const auto train = load_conformed(*cfg.train, *loaded.vocab, model.spec(), err);
            if (train.empty()) throw DataError("no usable training observations in '" + cfg.train->string() + "'");
            entries.push_back(baseline_entry("BL", baseline_frequency(train), test));
            entries.push_back(baseline_entry("NB", baseline_naive_bayes(train), test));
        }
        for (const auto& e : entries) {
            for (const auto& w : e.metrics.warnings) err << "warning: " << e.name << ": " << w << '\n';
        }
        ensure_dir(cfg.out_dir);
        write_metric_report(entries, cfg.out_dir / "metrics.txt", cfg.out_dir / "metrics.json");
        return kExitOk;
    });
}

int cmd_expand(const ExpandConfig& cfg, std::ostream& err) {
    return guarded(err, [&] {
        const auto target = parse_spec_shorthand(cfg.to);
        if (cfg.from) {
            // Parse first so a malformed --from is a config error even before data is read.
            parse_spec_shorthand(*cfg.from);
        }
        auto loaded = load_dataset(cfg.in);
        const auto& data_spec = loaded.data.spec();
        if (cfg.from) {
            const auto declared = multiplicity_map(parse_spec_shorthand(*cfg.from));
            const auto actual = data_spec.multiplicities();
            for (std::size_t t = 0; t < data_spec.types.size(); ++t) {
                const auto it = declared.find(data_spec.types[t].name);
                if (it == declared.end() || it->second != actual[t])
                    throw SpecError("--from does not describe the layers of '" + cfg.in.string() + "' (" +
                                    data_spec.notation() + ")");
            }
            if (declared.size() != data_spec.types.size())
                throw SpecError("--from names types that '" + cfg.in.string() + "' does not have");
        }
        for (const auto& req : target) {
            if (data_spec.type_index(req.name) == ModelSpec::npos)
                throw SpecError("type '" + req.name + "' does not appear in '" + cfg.in.string() + "'");
        }
        const auto spec = reduced_spec(data_spec, multiplicity_map(target), cluster_map(target));
        require_valid(spec);
        const auto expanded = expand_lower_order(loaded.data, data_spec, spec);
        save_dataset(expanded, restrict_vocab(loaded.vocab, spec), cfg.out, loaded.count_column);
        err << "wrote " << expanded.size() << " distinct rows (" << expanded.total_weight() << " observations) to "
            << cfg.out.string() << '\n';
        return kExitOk;
    });
}

int cmd_experiment(const RunConfig& cfg, std::ostream& err) {
    return guarded(err, [&] {
        validate_fit_config(cfg.fit);
        if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
            throw SpecError("train fraction must lie strictly between 0 and 1");
        auto prepared = prepare(cfg, err);
        const auto& spec = prepared.data.spec();
        std::pair<Dataset, Dataset> sides;
        try {
            sides = split(prepared.data, cfg.train_fraction, cfg.split_seed.value_or(cfg.fit.seed));
        } catch (const std::invalid_argument& e) {
            throw DataError(std::string("cannot split dataset: ") + e.what());
        }
        const auto& [train, test] = sides;

        FitConfig fit_cfg = with_trace(cfg, err);
        fit_cfg.keep = KeepPolicy::kAll;
        const auto report = fit(spec, train, fit_cfg);

        std::vector<ReportEntry> entries;
        std::vector<MetricReport> runs;
        for (std::size_t r = 0; r < report.restarts.size(); ++r) {
            const auto& restart = report.restarts[r];
            ReportEntry entry{"restart." + std::to_string(r), evaluate_model(*restart.model, test), std::nullopt, {}};
            entry.extra["seed"] = static_cast<double>(restart.seed);
            entry.extra["iterations"] = static_cast<double>(restart.iterations);
            entry.extra["train_log_likelihood"] = restart.final_log_likelihood();
            entry.extra["test_log_likelihood"] = log_likelihood(*restart.model, test);
            runs.push_back(entry.metrics);
            entries.push_back(std::move(entry));
        }
        const auto summary = summarize(runs);
        ReportEntry aggregate{"SIMSBM", summary.mean, summary.standard_error, {}};
        aggregate.extra["restarts"] = static_cast<double>(summary.runs);
        aggregate.extra["train_observations"] = static_cast<double>(train.total_weight());
        aggregate.extra["test_observations"] = static_cast<double>(test.total_weight());
        entries.insert(entries.begin(), std::move(aggregate));
        entries.push_back(baseline_entry("BL", baseline_frequency(train), test));
        entries.push_back(baseline_entry("NB", baseline_naive_bayes(train), test));

        ensure_dir(cfg.out_dir);
        write_metric_report(entries, cfg.out_dir / "experiment.txt", cfg.out_dir / "experiment.json");
        write_fit_report(report, spec, cfg.out_dir / "fit_report.json");
        err << spec.notation() << ": " << report.restarts.size() << " restarts, mean weighted F1 "
            << std::setprecision(4) << summary.mean.f1_max << " +/- " << summary.standard_error.f1_max << '\n';
        return kExitOk;
    });
}

int cmd_predict(const PredictConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto loaded = load_model(cfg.model);
        if (!loaded.vocab) throw DataError("model file '" + cfg.model.string() + "' carries no vocabulary");
        const auto& model = loaded.model;
        const auto& spec = model.spec();
        const auto& vocab = *loaded.vocab;
        if (cfg.context.size() != spec.layers.size())
            throw DataError("context has " + std::to_string(cfg.context.size()) + " tokens; the model expects " +
                            std::to_string(spec.layers.size()) + " (" + spec.notation() + ")");
        std::vector<std::uint32_t> context;
        for (std::size_t n = 0; n < spec.layers.size(); ++n) {
            const auto index = vocab.entities[vocab.type_index(spec.layers[n])].find(cfg.context[n]);
            if (!index) throw DataError("unknown " + spec.layers[n] + " token '" + cfg.context[n] + "'");
            context.push_back(*index);
        }
        const auto probs = predict(model, context);
        std::vector<std::size_t> order(probs.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return probs[a] > probs[b]; });
        out << std::setprecision(10);
        for (auto o : order) out << vocab.outputs.token(static_cast<std::uint32_t>(o)) << '\t' << probs[o] << '\n';
        return kExitOk;
    });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mixed-membership block models over typed interacting contexts", "simsbm"};
    app.require_subcommand(1);

    RunConfig run_cfg;
    std::string spec_text;
    std::string keep = "best";
    const auto add_run_options = [&](CLI::App* sub) {
        sub->add_option("--data", run_cfg.data, "tab-separated tuple file")->required();
        sub->add_option("--spec", spec_text, "types as name:multiplicity@clusters, comma separated")->required();
        sub->add_option("--restarts", run_cfg.fit.restarts, "independent EM runs")->capture_default_str();
        sub->add_option("--max-iters", run_cfg.fit.max_iters)->capture_default_str();
        sub->add_option("--rel-tol", run_cfg.fit.rel_tol, "relative likelihood change threshold")
            ->capture_default_str();
        sub->add_option("--patience", run_cfg.fit.patience, "iterations below --rel-tol before stopping")
            ->capture_default_str();
        sub->add_option("--seed", run_cfg.fit.seed, "restart r uses seed + r")->capture_default_str();
        sub->add_option("--jobs", run_cfg.fit.jobs, "worker threads")->capture_default_str();
        sub->add_option("--keep", keep, "best or all")->check(CLI::IsMember({"best", "all"}))->capture_default_str();
        sub->add_option("--out-dir", run_cfg.out_dir)->capture_default_str();
        sub->add_flag("--unordered-reduction", "merge worker statistics as they finish (not bit-reproducible)");
        sub->add_flag("--quiet", run_cfg.quiet, "no per-iteration trace");
    };

    auto* train = app.add_subcommand("train", "fit a model and write model.json and fit_report.json");
    add_run_options(train);

    auto* experiment = app.add_subcommand("experiment", "split, fit every restart, evaluate, aggregate");
    add_run_options(experiment);
    experiment->add_option("--train-fraction", run_cfg.train_fraction)->capture_default_str();
    std::uint64_t split_seed = 0;
    auto* split_opt = experiment->add_option("--split-seed", split_seed, "defaults to --seed");

    EvaluateConfig eval_cfg;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "score a test set; write metrics.txt and metrics.json");
    evaluate_cmd->add_option("--model", eval_cfg.model)->required();
    evaluate_cmd->add_option("--test", eval_cfg.test)->required();
    std::string train_path;
    auto* train_opt = evaluate_cmd->add_option("--train", train_path, "also score BL and NB baselines fit here");
    evaluate_cmd->add_option("--out-dir", eval_cfg.out_dir)->capture_default_str();

    ExpandConfig expand_cfg;
    std::string from_text;
    auto* expand = app.add_subcommand("expand", "rewrite a dataset at lower same-type interaction order");
    expand->add_option("--in", expand_cfg.in)->required();
    auto* from_opt = expand->add_option("--from", from_text, "expected multiplicities of the input");
    expand->add_option("--to", expand_cfg.to, "target multiplicities, e.g. f:2,g:1")->required();
    expand->add_option("--out", expand_cfg.out)->required();

    PredictConfig predict_cfg;
    auto* predict_cmd = app.add_subcommand("predict", "print the output distribution for one context");
    predict_cmd->add_option("--model", predict_cfg.model)->required();
    predict_cmd->add_option("--context", predict_cfg.context, "one token per layer, comma separated")
        ->required()
        ->delimiter(',');

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
    }

    if (train->parsed() || experiment->parsed()) {
        try {
            run_cfg.spec = parse_spec_shorthand(spec_text);
        } catch (const SpecError& e) {
            err << "error: " << e.what() << '\n';
            return kExitConfig;
        }
        run_cfg.fit.keep = keep == "all" ? KeepPolicy::kAll : KeepPolicy::kBestLikelihood;
        auto* sub = train->parsed() ? train : experiment;
        if (sub->get_option("--unordered-reduction")->as<bool>()) run_cfg.fit.reduction = Reduction::kUnordered;
        if (split_opt->count() > 0) run_cfg.split_seed = split_seed;
        return train->parsed() ? cmd_train(run_cfg, err) : cmd_experiment(run_cfg, err);
    }
    if (evaluate_cmd->parsed()) {
        if (train_opt->count() > 0) eval_cfg.train = train_path;
        return cmd_evaluate(eval_cfg, err);
    }
    if (expand->parsed()) {
        if (from_opt->count() > 0) expand_cfg.from = from_text;
        return cmd_expand(expand_cfg, err);
    }
    return cmd_predict(predict_cfg, out, err);
}

} // namespace simsbm::cli
