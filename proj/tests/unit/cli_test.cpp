#include "instances.hpp"

#include "simsbm/cli.hpp"
#include "simsbm/data_io.hpp"
#include "simsbm/errors.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

using namespace simsbm;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
  protected:
    void SetUp() override {
        static int counter = 0;
        dir_ = fs::temp_directory_path() / ("simsbm_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path path(const std::string& name) const { return dir_ / name; }

    int run(std::vector<std::string> args) {
        out_.str("");
        err_.str("");
        return cli::run(args, out_, err_);
    }

    void write(const std::string& name, const std::string& text) { std::ofstream(path(name)) << text; }

    std::string read(const std::string& name) const {
        std::ifstream in(path(name));
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    /// Users u0..u5 and items i0..i3; the output is determined by parities.
    void write_toy(const std::string& name) {
        std::string text = "#types\tu\ti\tout\n";
        for (int rep = 0; rep < 3; ++rep)
            for (int u = 0; u < 6; ++u)
                for (int i = 0; i < 4; ++i)
                    text += "u" + std::to_string(u) + "\ti" + std::to_string(i) + "\t" + ((u + i) % 2 ? "odd" : "even") + "\n";
        write(name, text);
    }

    fs::path dir_;
    std::ostringstream out_;
    std::ostringstream err_;
};

} // namespace

TEST(SpecShorthand, ParsesTypesMultiplicitiesAndClusters) {
    const auto types = cli::parse_spec_shorthand("f:2@5, g:1@3");
    ASSERT_EQ(types.size(), 2u);
    EXPECT_EQ(types[0].name, "f");
    EXPECT_EQ(types[0].multiplicity, 2u);
    EXPECT_EQ(types[0].clusters, 5u);
    EXPECT_EQ(types[1].name, "g");
    EXPECT_EQ(types[1].clusters, 3u);
    EXPECT_EQ(cli::parse_spec_shorthand("f:3")[0].clusters, 1u);
}

TEST(SpecShorthand, RejectsMalformedItems) {
    for (const char* bad : {"", "f", "f:", "f:x@2", "f:2@", "f:2@0", "f:0@2", ":2@2", "f:1,f:2", "f:1@2,"})
        EXPECT_THROW(cli::parse_spec_shorthand(bad), SpecError) << bad;
}

TEST_F(CliTest, TrainWritesModelAndReport) {
    write_toy("toy.tsv");
    ASSERT_EQ(run({"train", "--data", path("toy.tsv"), "--spec", "u:1@2,i:1@2", "--restarts", "2", "--out-dir",
                   path("out")}),
              0)
        << err_.str();
    EXPECT_TRUE(fs::exists(path("out/model.json")));
    const auto report = nlohmann::json::parse(read("out/fit_report.json"));
    EXPECT_EQ(report["restarts"].size(), 2u);
    // One trace line per iteration on standard error, nothing on standard output.
    EXPECT_NE(err_.str().find("iter 1 loglik"), std::string::npos);
    EXPECT_TRUE(out_.str().empty());
}

TEST_F(CliTest, MinimalSingleTypeSpec) {
    write("d.tsv", "#types\tf\tout\na\tx\nb\ty\n");
    EXPECT_EQ(run({"train", "--data", path("d.tsv"), "--spec", "f:1@1", "--restarts", "1", "--quiet", "--out-dir",
                   path("m")}),
              0)
        << err_.str();
    EXPECT_TRUE(fs::exists(path("m/model.json")));
}

TEST_F(CliTest, ExitCodes) {
    write_toy("toy.tsv");
    EXPECT_EQ(run({"train", "--data", path("missing.tsv"), "--spec", "u:1@2"}), cli::kExitData);
    EXPECT_EQ(run({"train", "--data", path("toy.tsv"), "--spec", "u:1@0"}), cli::kExitConfig);
    EXPECT_EQ(run({"train", "--data", path("toy.tsv"), "--spec", "u:3@2"}), cli::kExitConfig);
    EXPECT_EQ(run({"train", "--data", path("toy.tsv"), "--spec", "u:1@2", "--restarts", "0"}), cli::kExitConfig);
    EXPECT_EQ(run({"train", "--spec", "u:1@2"}), cli::kExitConfig);
    EXPECT_EQ(run({"bogus"}), cli::kExitConfig);
    write("empty.tsv", "#types\tu\ti\tout\n");
    EXPECT_EQ(run({"train", "--data", path("empty.tsv"), "--spec", "u:1@2,i:1@1", "--quiet"}), cli::kExitData);
    write("ragged.tsv", "#types\tu\ti\tout\na\tb\n");
    EXPECT_EQ(run({"train", "--data", path("ragged.tsv"), "--spec", "u:1@2"}), cli::kExitData);
}

TEST_F(CliTest, EvaluateOnTrainingSetMatchesFitLikelihood) {
    write_toy("toy.tsv");
    ASSERT_EQ(run({"train", "--data", path("toy.tsv"), "--spec", "u:1@2,i:1@2", "--restarts", "3", "--quiet",
                   "--out-dir", path("out")}),
              0);
    ASSERT_EQ(run({"evaluate", "--model", path("out/model.json"), "--test", path("toy.tsv"), "--train", path("toy.tsv"),
                   "--out-dir", path("eval")}),
              0)
        << err_.str();
    const auto fit_report = nlohmann::json::parse(read("out/fit_report.json"));
    const double fitted = fit_report["restarts"][fit_report["selected"].get<std::size_t>()]["final_log_likelihood"];
    const auto metrics = nlohmann::json::parse(read("eval/metrics.json"));
    ASSERT_EQ(metrics.size(), 3u);
    EXPECT_EQ(metrics[0]["name"], "SIMSBM");
    EXPECT_NEAR(metrics[0]["extra"]["log_likelihood"].get<double>(), fitted, 1e-9);
    EXPECT_EQ(metrics[1]["name"], "BL");
    EXPECT_EQ(metrics[2]["name"], "NB");
    EXPECT_NE(read("eval/metrics.txt").find("SIMSBM.p_at_1="), std::string::npos);
}

TEST_F(CliTest, EvaluatePerfectMemorization) {
    write_toy("toy.tsv");
    ASSERT_EQ(run({"train", "--data", path("toy.tsv"), "--spec", "u:1@2,i:1@2", "--restarts", "5", "--quiet",
                   "--out-dir", path("out")}),
              0);
    ASSERT_EQ(run({"evaluate", "--model", path("out/model.json"), "--test", path("toy.tsv"), "--out-dir", path("e")}), 0);
    const auto metrics = nlohmann::json::parse(read("e/metrics.json"));
    EXPECT_EQ(metrics[0]["metrics"]["p_at_1"].get<double>(), 1.0);
}

TEST_F(CliTest, EvaluateRejectsMismatchedData) {
    write_toy("toy.tsv");
    ASSERT_EQ(run({"train", "--data", path("toy.tsv"), "--spec", "u:1@2,i:1@2", "--restarts", "1", "--quiet",
                   "--out-dir", path("out")}),
              0);
    write("other.tsv", "#types\tu\tz\tout\nu1\tz\todd\n");
    EXPECT_EQ(run({"evaluate", "--model", path("out/model.json"), "--test", path("other.tsv")}), cli::kExitData);
    EXPECT_NE(err_.str().find("error:"), std::string::npos);
    write("unknown.tsv", "#types\tu\ti\tout\nnobody\ti0\todd\n");
    EXPECT_EQ(run({"evaluate", "--model", path("out/model.json"), "--test", path("unknown.tsv")}), cli::kExitData);
}

TEST_F(CliTest, ExpandWorkedExample) {
    write("tri.tsv", "#types\tf\tf\tf\tout\n1\t2\t3\to\n");
    ASSERT_EQ(run({"expand", "--in", path("tri.tsv"), "--from", "f:3", "--to", "f:2", "--out", path("pairs.tsv")}), 0)
        << err_.str();
    EXPECT_EQ(read("pairs.tsv"), "#types\tf\tf\tout\n1\t2\to\n1\t3\to\n2\t3\to\n");
}

TEST_F(CliTest, ExpandIdentityAndEmptyAndIncrease) {
    write("d.tsv", "#types\tf\tf\tg\tout\tcount\nb\ta\tx\to\t2\na\tc\ty\tp\t1\n");
    ASSERT_EQ(run({"expand", "--in", path("d.tsv"), "--to", "f:2,g:1", "--out", path("same.tsv")}), 0);
    const auto before = load_dataset(path("d.tsv"));
    const auto after = load_dataset(path("same.tsv"));
    EXPECT_EQ(before.data, after.data);
    EXPECT_TRUE(after.count_column);

    write("empty.tsv", "#types\tf\tf\tout\n");
    ASSERT_EQ(run({"expand", "--in", path("empty.tsv"), "--to", "f:1", "--out", path("e.tsv")}), 0);
    EXPECT_EQ(read("e.tsv"), "#types\tf\tout\n");

    EXPECT_EQ(run({"expand", "--in", path("d.tsv"), "--to", "f:3,g:1", "--out", path("x.tsv")}), cli::kExitConfig);
    EXPECT_EQ(run({"expand", "--in", path("d.tsv"), "--from", "f:3,g:1", "--to", "f:1", "--out", path("x.tsv")}),
              cli::kExitConfig);
    EXPECT_FALSE(fs::exists(path("x.tsv")));
}

TEST_F(CliTest, TrainExpandsHigherOrderData) {
    write("tri.tsv", "#types\tf\tf\tf\tout\na\tb\tc\tx\nb\tc\td\ty\na\tc\td\tx\n");
    ASSERT_EQ(run({"train", "--data", path("tri.tsv"), "--spec", "f:2@2", "--restarts", "1", "--quiet", "--out-dir",
                   path("m")}),
              0)
        << err_.str();
    EXPECT_EQ(load_model(path("m/model.json")).model.spec().layers.size(), 2u);
    // The evaluation side expands the same way.
    EXPECT_EQ(run({"evaluate", "--model", path("m/model.json"), "--test", path("tri.tsv"), "--out-dir", path("e")}), 0)
        << err_.str();
}

TEST_F(CliTest, ExperimentReportStructureAndDeterminism) {
    write_toy("toy.tsv");
    const std::vector<std::string> args{"experiment", "--data", path("toy.tsv"), "--spec", "u:1@2,i:1@2",
                                        "--restarts", "2", "--seed", "4", "--quiet", "--max-iters", "50"};
    auto first = args;
    first.insert(first.end(), {"--out-dir", path("a")});
    auto second = args;
    second.insert(second.end(), {"--out-dir", path("b"), "--jobs", "2"});
    ASSERT_EQ(run(first), 0) << err_.str();
    ASSERT_EQ(run(second), 0) << err_.str();
    EXPECT_EQ(read("a/experiment.json"), read("b/experiment.json"));
    const auto doc = nlohmann::json::parse(read("a/experiment.json"));
    std::vector<std::string> names;
    for (const auto& e : doc) names.push_back(e["name"]);
    EXPECT_EQ(names, (std::vector<std::string>{"SIMSBM", "restart.0", "restart.1", "BL", "NB"}));
    EXPECT_TRUE(doc[0].contains("standard_error"));
    EXPECT_EQ(doc[0]["extra"]["restarts"], 2.0);
}

TEST_F(CliTest, PredictPrintsSortedDistribution) {
    write_toy("toy.tsv");
    ASSERT_EQ(run({"train", "--data", path("toy.tsv"), "--spec", "u:1@2,i:1@2", "--restarts", "5", "--quiet",
                   "--out-dir", path("out")}),
              0);
    ASSERT_EQ(run({"predict", "--model", path("out/model.json"), "--context", "u1,i0"}), 0) << err_.str();
    std::istringstream lines(out_.str());
    std::string token;
    double first = 0.0, second = 0.0;
    lines >> token >> first;
    EXPECT_EQ(token, "odd");
    lines >> token >> second;
    EXPECT_GE(first, second);
    EXPECT_NEAR(first + second, 1.0, 1e-9);
    EXPECT_EQ(run({"predict", "--model", path("out/model.json"), "--context", "u1,nobody"}), cli::kExitData);
    EXPECT_EQ(run({"predict", "--model", path("out/model.json"), "--context", "u1"}), cli::kExitData);
}

TEST_F(CliTest, CommandsDoNotTouchInputs) {
    write_toy("toy.tsv");
    const auto before = read("toy.tsv");
    ASSERT_EQ(run({"train", "--data", path("toy.tsv"), "--spec", "u:1@2", "--restarts", "1", "--quiet", "--out-dir",
                   path("out")}),
              0);
    ASSERT_EQ(run({"expand", "--in", path("toy.tsv"), "--to", "u:1", "--out", path("u.tsv")}), 0);
    EXPECT_EQ(read("toy.tsv"), before);
}
