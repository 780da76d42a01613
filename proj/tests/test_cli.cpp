#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "ilicast_test_cli";

std::string slurp(const fs::path &p) {
	std::ifstream in(p, std::ios::binary);
	std::ostringstream s;
	s << in.rdbuf();
	return s.str();
}

// Runs the CLI with stdout and stderr captured to files; returns the exit code.
int run(const std::string &args, std::string *err = nullptr) {
	const auto out = kWork / "stdout.txt", e = kWork / "stderr.txt";
	const std::string cmd = std::string("\"") + ILICAST_CLI + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
	                        e.string() + "\"";
	const int status = std::system(cmd.c_str());
	if (err) {
		*err = slurp(e);
	}
	return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write(const fs::path &p, const std::string &text) {
	std::ofstream(p, std::ios::trunc) << text;
}

class Cli : public ::testing::Test {
protected:
	static void SetUpTestSuite() {
		fs::remove_all(kWork);
		fs::create_directories(kWork);
		write(kWork / "synthetic.cfg", "states = ME, NH, VT, MA\nnum_seasons = 2\n");
		ASSERT_EQ(run("simulate --config " + (kWork / "synthetic.cfg").string() + " --seed 4 --out " +
		              (kWork / "sim").string()),
		          0);
		write(kWork / "run.cfg", "data = sim/synthetic.csv\ntrain_seasons = 2010-11\ntest_seasons = 2011-12\n"
		                         "classes = linear, lvcf\noutput = out\n");
	}
};

} // namespace

TEST_F(Cli, SimulateWritesDataAndMetadata) {
	EXPECT_TRUE(fs::exists(kWork / "sim" / "synthetic.csv"));
	const auto meta = nlohmann::json::parse(slurp(kWork / "sim" / "simulate_metadata.json"));
	EXPECT_EQ(meta.at("command"), "simulate");
	EXPECT_EQ(meta.at("seed"), 4);
	EXPECT_EQ(meta.at("data_hash").get<std::string>().size(), 64u);
	const auto before = slurp(kWork / "sim" / "synthetic.csv");
	ASSERT_EQ(run("simulate --config " + (kWork / "synthetic.cfg").string() + " --seed 4 --out " +
	              (kWork / "sim2").string()),
	          0);
	EXPECT_EQ(before, slurp(kWork / "sim2" / "synthetic.csv"));
}

TEST_F(Cli, ValidateCleanFile) {
	EXPECT_EQ(run("validate --data " + (kWork / "sim" / "synthetic.csv").string() + " --config " +
	              (kWork / "run.cfg").string() + " --out " + (kWork / "val").string()),
	          0);
	const auto report = nlohmann::json::parse(slurp(kWork / "val" / "validation_report.json"));
	EXPECT_TRUE(report.at("ok").get<bool>());
	EXPECT_EQ(report.at("train_calendar_weeks"), 31);
	EXPECT_EQ(report.at("test_calendar_weeks"), 31);
	EXPECT_TRUE(fs::exists(kWork / "val" / "validate_metadata.json"));
}

TEST_F(Cli, ValidateReportsDuplicateKey) {
	auto text = slurp(kWork / "sim" / "synthetic.csv");
	const auto first = text.find('\n') + 1;
	text += text.substr(first, text.find('\n', first) + 1 - first); // repeat the first data row
	write(kWork / "dup.csv", text);
	std::string err;
	EXPECT_EQ(run("validate --data " + (kWork / "dup.csv").string() + " --out " + (kWork / "dupval").string(), &err), 2);
	const auto report = slurp(kWork / "dupval" / "validation_report.json");
	EXPECT_NE(report.find("duplicate"), std::string::npos) << report;
	EXPECT_NE(err.find("duplicate"), std::string::npos) << err;
	EXPECT_FALSE(nlohmann::json::parse(report).at("ok").get<bool>());
}

TEST_F(Cli, BacktestScoreAndReport) {
	const auto cfg = (kWork / "run.cfg").string();
	const auto out = kWork / "out";
	ASSERT_EQ(run("backtest --config " + cfg + " --jobs 2"), 0);
	for (const char *f : {"manifest.jsonl", "scores.csv", "aggregate_by_state.csv", "aggregate_by_week.csv",
	                      "unavailable.csv", "backtest_metadata.json", "forecasts/linear__neighbors.csv"}) {
		EXPECT_TRUE(fs::exists(out / f)) << f;
	}
	const auto scores = slurp(out / "scores.csv");
	ASSERT_EQ(run("score --out " + out.string()), 0);
	EXPECT_EQ(scores, slurp(out / "scores.csv"));
	EXPECT_TRUE(fs::exists(out / "score_metadata.json"));
	ASSERT_EQ(run("report --out " + out.string()), 0);
	EXPECT_TRUE(fs::exists(out / "report" / "summary.txt"));
	EXPECT_TRUE(fs::exists(out / "report" / "diff_linear__geo_pooled_by_state.csv"));
	EXPECT_TRUE(fs::exists(out / "report_metadata.json"));
	const auto summary = slurp(out / "report" / "summary.txt");
	ASSERT_EQ(run("report --out " + out.string()), 0);
	EXPECT_EQ(summary, slurp(out / "report" / "summary.txt"));
	const auto meta = nlohmann::json::parse(slurp(out / "backtest_metadata.json"));
	EXPECT_EQ(meta.at("command"), "backtest");
	EXPECT_EQ(meta.at("config_hash").get<std::string>().size(), 64u);
	// Resuming a finished run is a no-op.
	ASSERT_EQ(run("backtest --config " + cfg + " --resume"), 0);
	EXPECT_EQ(scores, slurp(out / "scores.csv"));
}

TEST_F(Cli, ReportOnIncompleteRunFails) {
	const auto dir = kWork / "partial";
	fs::create_directories(dir);
	write(dir / "manifest.jsonl", "");
	std::string err;
	EXPECT_EQ(run("report --out " + dir.string(), &err), 3);
	EXPECT_FALSE(err.empty());
}

TEST_F(Cli, UsageErrors) {
	EXPECT_EQ(run(""), 1);
	EXPECT_EQ(run("frobnicate"), 1);
	EXPECT_EQ(run("backtest"), 1);
	write(kWork / "bad.cfg", "train_seasons = 2010-11\ntest_seasons = 2011-12\nnonsense = 1\n");
	std::string err;
	EXPECT_EQ(run("backtest --config " + (kWork / "bad.cfg").string(), &err), 1);
	EXPECT_NE(err.find("nonsense"), std::string::npos) << err;
	EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, MissingDataFileIsARunError) {
	write(kWork / "nodata.cfg", "data = does_not_exist.csv\ntrain_seasons = 2010-11\ntest_seasons = 2011-12\n");
	EXPECT_EQ(run("backtest --config " + (kWork / "nodata.cfg").string() + " --out " + (kWork / "x").string()), 3);
}
