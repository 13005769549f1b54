#pragma once

#include "simsbm/em.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace simsbm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitFit = 3;

struct TypeRequest {
    std::string name;
    std::size_t multiplicity = 1;
    std::size_t clusters = 1;
};

/// "f:2@5,g:1@3" -> {f, 2 layers, 5 clusters}, {g, 1 layer, 3 clusters}.
/// The "@K" part is optional (K = 1). Throws SpecError.
std::vector<TypeRequest> parse_spec_shorthand(std::string_view text);

std::map<std::string, std::size_t> multiplicity_map(const std::vector<TypeRequest>& types);
std::map<std::string, std::size_t> cluster_map(const std::vector<TypeRequest>& types);

struct RunConfig {
    std::filesystem::path data;
    std::vector<TypeRequest> spec;
    FitConfig fit;
    double train_fraction = 0.9;
    std::optional<std::uint64_t> split_seed;
    std::filesystem::path out_dir = ".";
    bool quiet = false;
};

struct EvaluateConfig {
    std::filesystem::path model;
    std::filesystem::path test;
    std::optional<std::filesystem::path> train;
    std::filesystem::path out_dir = ".";
};

struct ExpandConfig {
    std::filesystem::path in;
    std::optional<std::string> from;
    std::string to;
    std::filesystem::path out;
};

struct PredictConfig {
    std::filesystem::path model;
    std::vector<std::string> context;
};

int cmd_train(const RunConfig& cfg, std::ostream& err);
int cmd_evaluate(const EvaluateConfig& cfg, std::ostream& err);
int cmd_expand(const ExpandConfig& cfg, std::ostream& err);
int cmd_experiment(const RunConfig& cfg, std::ostream& err);
int cmd_predict(const PredictConfig& cfg, std::ostream& out, std::ostream& err);

/// Parses `args` (without the program name) and dispatches to a subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace simsbm::cli
