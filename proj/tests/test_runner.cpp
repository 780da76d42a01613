#include "ilicast/report.hpp"
#include "ilicast/runner.hpp"
#include "ilicast/synthetic.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace ilicast;

namespace {

const std::vector<std::string> kStates = {"MA", "ME", "NH", "VT"};

const AdjacencyGraph &graph() {
	static const auto g = AdjacencyGraph::load(std::string(ILICAST_DATA_DIR) + "/adjacency.csv");
	return g;
}

// Two seasons: 2010-11 for training, 2011-12 (31 in-season weeks) for testing.
const ObservationTable &table() {
	static const auto t = [] {
		SyntheticConfig cfg;
		cfg.states = kStates;
		cfg.num_seasons = 2;
		return generate_synthetic(cfg, 3).table;
	}();
	return t;
}

RunConfig base_config(const std::string &out = {}) {
	RunConfig c;
	c.train_seasons = {Season{2010}};
	c.test_seasons = {Season{2011}};
	c.output_dir = out;
	return c;
}

std::string scratch(const std::string &name) {
	const auto p = fs::temp_directory_path() / ("ilicast_test_runner_" + name);
	fs::remove_all(p);
	return p.string();
}

std::string slurp(const fs::path &p) {
	std::ifstream in(p, std::ios::binary);
	std::ostringstream s;
	s << in.rdbuf();
	return s.str();
}

// Every regular file under dir, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path &dir) {
	std::map<std::string, std::string> out;
	for (const auto &e : fs::recursive_directory_iterator(dir)) {
		if (e.is_regular_file()) {
			out[fs::relative(e.path(), dir).string()] = slurp(e.path());
		}
	}
	return out;
}

} // namespace

TEST(Backtest, CellCounts) {
	const auto r = run_backtest(base_config(), table(), graph());
	EXPECT_TRUE(r.stats.complete);
	EXPECT_EQ(r.target_weeks.size(), 31u);
	EXPECT_EQ(r.stats.cells_total, 31u * 16 * 4);
	EXPECT_EQ(r.forecasts.size(), r.stats.cells_total);
	std::map<std::pair<ModelSpec, std::string>, int> per;
	for (const auto &f : r.forecasts) {
		++per[{f.spec, f.state}];
		EXPECT_EQ(f.origin, f.week.plus(-2));
		EXPECT_TRUE(f.truth.has_value());
	}
	EXPECT_EQ(per.size(), 16u * 4);
	for (const auto &[k, n] : per) {
		EXPECT_EQ(n, 31) << k.first.name() << " " << k.second;
	}
	EXPECT_EQ(r.stats.unavailable, 0u);
	EXPECT_EQ(r.scores.records().size(), r.forecasts.size());
}

TEST(Backtest, PooledFitOncePerClassAndWeek) {
	const auto r = run_backtest(base_config(), table(), graph());
	EXPECT_EQ(r.stats.pooled_fits, 31u * 3);
	// 12 per-state regression models refit every week, plus the pooled fits.
	EXPECT_EQ(r.stats.fits, 31u * (12 * 4 + 3));
	EXPECT_EQ(r.stats.leakage_checks, r.stats.fits);
}

TEST(Backtest, NoFitSeesTheFuture) {
	std::size_t calls = 0;
	RunOptions opt;
	opt.on_fit = [&](const FitEvent &e) {
		++calls;
		EXPECT_EQ(e.origin, e.target_week.plus(-2));
		ASSERT_GT(e.design.rows(), 0);
		for (std::size_t i = 0; i < e.design.outcome_times.size(); ++i) {
			EXPECT_LE(e.design.outcome_times[i], e.origin);
			EXPECT_LT(e.design.outcome_times[i], e.target_week);
			EXPECT_EQ(e.design.fit_times[i], e.design.outcome_times[i].plus(-2));
		}
	};
	const auto r = run_backtest(base_config(), table(), graph(), opt);
	EXPECT_EQ(calls, r.stats.fits);
}

TEST(Backtest, TrainingGrowsWeekByWeek) {
	std::map<std::string, std::vector<Eigen::Index>> rows_by_origin;
	RunOptions opt;
	opt.on_fit = [&](const FitEvent &e) {
		if (e.model.spec == ModelSpec{ModelClass::Linear, Variant::Isolated} && e.model.target == "ME") {
			rows_by_origin["ME"].push_back(e.design.rows());
		}
	};
	run_backtest(base_config(), table(), graph(), opt);
	const auto &v = rows_by_origin["ME"];
	ASSERT_EQ(v.size(), 31u);
	for (std::size_t i = 1; i < v.size(); ++i) {
		EXPECT_GE(v[i], v[i - 1]);
	}
	EXPECT_GT(v.back(), v.front());
}

TEST(Backtest, LvcfOnly) {
	auto c = base_config();
	c.models = {ModelSpec::lvcf()};
	const auto r = run_backtest(c, table(), graph());
	EXPECT_EQ(r.stats.fits, 0u);
	EXPECT_EQ(r.forecasts.size(), 31u * 4);
	for (const auto &f : r.forecasts) {
		ASSERT_TRUE(f.available);
		EXPECT_EQ(f.point, *table().pct(f.state, f.week.plus(-2)));
	}
	const auto sections = build_report(r.scores);
	ASSERT_EQ(sections.size(), 1u);
	EXPECT_EQ(sections[0].cls, ModelClass::Lvcf);
	EXPECT_TRUE(sections[0].diffs.empty());
}

// Independent replay of the interval radii: warm start from |I_u - I_{u-2}|
// on training outcomes, then one tracker step per realized score once the
// scored week is no later than the forecast origin.
TEST(Backtest, LvcfIntervalsMatchIndependentReplay) {
	auto c = base_config();
	c.models = {ModelSpec::lvcf()};
	const auto r = run_backtest(c, table(), graph());
	const auto &t = table();
	for (const auto &state : kStates) {
		std::vector<ForecastRow> rows;
		for (const auto &f : r.forecasts) {
			if (f.state == state) {
				rows.push_back(f);
			}
		}
		const Epiweek first_origin = rows.front().origin;
		std::vector<double> res;
		for (const auto &w : Season{2010}.weeks()) {
			if (w <= first_origin) {
				res.push_back(std::abs(*t.pct(state, w) - *t.pct(state, w.plus(-2))));
			}
		}
		std::array<double, 3> radius{};
		const std::array<double, 3> levels = {0.5, 0.8, 0.95};
		for (std::size_t k = 0; k < 3; ++k) {
			radius[k] = oracle::pinball_midpoint(res, levels[k]);
		}
		std::vector<double> sorted = res;
		std::sort(sorted.begin(), sorted.end());
		const double eta = 0.1 * oracle::pinball_midpoint(sorted, 0.9);
		std::size_t applied = 0;
		for (const auto &row : rows) {
			while (applied < rows.size() && rows[applied].week <= row.origin) {
				const double s = std::abs(*rows[applied].truth - rows[applied].point);
				for (std::size_t k = 0; k < 3; ++k) {
					radius[k] = std::max(0.0, radius[k] + eta * ((s > radius[k] ? 1.0 : 0.0) - (1 - levels[k])));
				}
				++applied;
			}
			EXPECT_NEAR(row.eta, eta, 1e-14);
			for (std::size_t k = 0; k < 3; ++k) {
				EXPECT_NEAR(row.radius[k], radius[k], 1e-12) << state << " " << row.week.to_string() << " k=" << k;
			}
		}
	}
}

TEST(Backtest, IntervalsContainPointAndAreClipped) {
	const auto r = run_backtest(base_config(), table(), graph());
	for (const auto &f : r.forecasts) {
		for (std::size_t k = 0; k < 3; ++k) {
			const auto [lo, hi] = f.bounds(k);
			EXPECT_GE(lo, 0.0);
			EXPECT_LE(lo, std::max(0.0, f.point));
			EXPECT_GE(hi, f.point);
		}
	}
}

TEST(Backtest, DeterministicAcrossRunsAndThreads) {
	const auto a = scratch("det_a"), b = scratch("det_b"), p = scratch("det_p");
	run_backtest(base_config(a), table(), graph());
	run_backtest(base_config(b), table(), graph());
	auto c = base_config(p);
	c.jobs = 3;
	run_backtest(c, table(), graph());
	const auto sa = snapshot(a);
	EXPECT_EQ(sa, snapshot(b));
	EXPECT_EQ(sa, snapshot(p));
	EXPECT_TRUE(sa.contains("scores.csv"));
	EXPECT_TRUE(sa.contains("aggregate_by_state.csv"));
	EXPECT_TRUE(sa.contains("manifest.jsonl"));
	EXPECT_EQ(std::count_if(sa.begin(), sa.end(), [](const auto &kv) { return kv.first.starts_with("forecasts/"); }), 16);
	// Rerunning into the same directory reproduces it.
	run_backtest(base_config(a), table(), graph());
	EXPECT_EQ(sa, snapshot(a));
}

TEST(Backtest, ResumeAfterInterruption) {
	const auto full = scratch("resume_full"), part = scratch("resume_part");
	const auto reference = run_backtest(base_config(full), table(), graph());
	RunOptions stop;
	const std::size_t half = reference.stats.cells_total / 2 + 7; // stop mid-week
	stop.max_new_cells = half;
	const auto first = run_backtest(base_config(part), table(), graph(), stop);
	EXPECT_FALSE(first.stats.complete);
	EXPECT_EQ(first.stats.cells_computed, half);
	EXPECT_FALSE(fs::exists(fs::path(part) / "scores.csv"));
	EXPECT_THROW(load_complete_run(part), ResumeError);

	RunOptions resume;
	resume.resume = true;
	const auto second = run_backtest(base_config(part), table(), graph(), resume);
	EXPECT_TRUE(second.stats.complete);
	EXPECT_EQ(second.stats.cells_loaded, half);
	EXPECT_EQ(second.stats.cells_computed, reference.stats.cells_total - half);
	EXPECT_EQ(snapshot(full), snapshot(part));

	// Resuming a finished run recomputes nothing.
	const auto third = run_backtest(base_config(part), table(), graph(), resume);
	EXPECT_EQ(third.stats.cells_computed, 0u);
	EXPECT_EQ(third.stats.fits, 0u);
	EXPECT_EQ(snapshot(full), snapshot(part));
}

TEST(Backtest, ResumeDropsUnconfirmedLines) {
	const auto full = scratch("torn_full"), part = scratch("torn_part");
	run_backtest(base_config(full), table(), graph());
	RunOptions stop;
	stop.max_new_cells = 200;
	run_backtest(base_config(part), table(), graph(), stop);
	// A forecast line written without its manifest entry, as after a crash.
	std::ofstream(fs::path(part) / "forecasts" / "linear__isolated.csv", std::ios::app)
	    << "linear,isolated,ME,2011w52,2011w50,1,9,9,9,9,9,9,9,0,0,0,0,NA,\n";
	RunOptions resume;
	resume.resume = true;
	run_backtest(base_config(part), table(), graph(), resume);
	EXPECT_EQ(snapshot(full), snapshot(part));
}

TEST(Backtest, ResumeRejectsChangedConfig) {
	const auto dir = scratch("mismatch");
	RunOptions stop;
	stop.max_new_cells = 100;
	run_backtest(base_config(dir), table(), graph(), stop);
	auto changed = base_config(dir);
	changed.epsilon = 0.1;
	RunOptions resume;
	resume.resume = true;
	EXPECT_THROW(run_backtest(changed, table(), graph(), resume), ResumeError);
	EXPECT_THROW(run_backtest(base_config(scratch("nothing")), table(), graph(), resume), ResumeError);
}

TEST(Backtest, ResumeRejectsCorruptManifest) {
	const auto dir = scratch("corrupt");
	RunOptions stop;
	stop.max_new_cells = 100;
	run_backtest(base_config(dir), table(), graph(), stop);
	RunOptions resume;
	resume.resume = true;
	{
		std::ofstream(fs::path(dir) / "manifest.jsonl", std::ios::app) << "{not json\n";
	}
	EXPECT_THROW(run_backtest(base_config(dir), table(), graph(), resume), ResumeError);

	// A confirmed cell whose forecast line was altered.
	const auto dir2 = scratch("corrupt2");
	run_backtest(base_config(dir2), table(), graph(), stop);
	const auto path = fs::path(dir2) / "forecasts" / "lvcf__baseline.csv";
	auto text = slurp(path);
	const auto pos = text.find('\n', text.find('\n') + 1);
	text.insert(pos, "0");
	std::ofstream(path, std::ios::trunc | std::ios::binary) << text;
	EXPECT_THROW(run_backtest(base_config(dir2), table(), graph(), resume), ResumeError);
}

TEST(Backtest, CompleteRunLoadsAndScoresIdentically) {
	const auto dir = scratch("load");
	const auto r = run_backtest(base_config(dir), table(), graph());
	const auto rows = load_complete_run(dir);
	EXPECT_EQ(rows.size(), r.forecasts.size());
	const auto rescored = score_forecasts(rows);
	std::ostringstream a, b;
	write_scores_csv(r.scores, a);
	write_scores_csv(rescored, b);
	EXPECT_EQ(a.str(), b.str());
}

TEST(Backtest, IncompleteRunNamesMissingCells) {
	const auto dir = scratch("incomplete");
	RunOptions stop;
	stop.max_new_cells = 10;
	run_backtest(base_config(dir), table(), graph(), stop);
	try {
		load_complete_run(dir);
		FAIL();
	} catch (const ResumeError &e) {
		const std::string msg = e.what();
		EXPECT_NE(msg.find("missing cells"), std::string::npos);
		EXPECT_NE(msg.find("@2011w"), std::string::npos) << msg;
	}
}

TEST(Backtest, ReportIsIdempotent) {
	const auto dir = scratch("report");
	const auto r = run_backtest(base_config(dir), table(), graph());
	write_report(r.scores, fs::path(dir) / "report");
	const auto first = snapshot(fs::path(dir) / "report");
	write_report(score_forecasts(load_complete_run(dir)), fs::path(dir) / "report");
	EXPECT_EQ(first, snapshot(fs::path(dir) / "report"));
	// Four non-isolated variants per regression class, two tables each.
	EXPECT_EQ(first.size(), 3u * 4 * 2 + 1);
	EXPECT_TRUE(first.contains("diff_quantile__neighbors_us_by_week.csv"));
	const auto &summary = first.at("summary.txt");
	EXPECT_NE(summary.find("== lvcf =="), std::string::npos);
	EXPECT_NE(summary.find("best by WIS"), std::string::npos);
}

TEST(Backtest, DebugDumps) {
	const auto dir = scratch("debug");
	auto c = base_config(dir);
	c.debug_dumps = true;
	c.models = {{ModelClass::Linear, Variant::Neighbors}, {ModelClass::Poisson, Variant::GeoPooled}};
	run_backtest(c, table(), graph());
	const auto files = snapshot(dir);
	EXPECT_TRUE(files.contains("debug/tracker_trace.csv"));
	EXPECT_TRUE(files.contains("debug/coefficients.csv"));
	EXPECT_TRUE(files.contains("debug/design/linear_neighbors_ME_2011w38.csv"));
	EXPECT_TRUE(files.contains("debug/design/poisson_geo_pooled_pooled_2011w38.csv"));
	// Debug output does not change results.
	const auto plain = scratch("debug_plain");
	auto p = c;
	p.output_dir = plain;
	p.debug_dumps = false;
	run_backtest(p, table(), graph());
	EXPECT_EQ(slurp(fs::path(dir) / "scores.csv"), slurp(fs::path(plain) / "scores.csv"));
}

TEST(Backtest, IsolatedStateHasNoNeighborForecasts) {
	auto c = base_config();
	c.states = {"ME", "VT"}; // not adjacent
	c.models = {{ModelClass::Linear, Variant::Neighbors}, {ModelClass::Linear, Variant::Isolated}};
	const auto r = run_backtest(c, table(), graph());
	for (const auto &f : r.forecasts) {
		EXPECT_EQ(f.available, f.spec.variant == Variant::Isolated) << f.reason;
	}
	EXPECT_EQ(r.scores.unavailable().size(), 31u * 2);
}

TEST(Backtest, InputErrors) {
	auto c = base_config();
	c.states = {"GA"};
	EXPECT_THROW(run_backtest(c, table(), graph()), InsufficientDataError);
	auto late = base_config();
	late.train_seasons = {Season{2008}};
	late.test_seasons = {Season{2009}};
	EXPECT_THROW(run_backtest(late, table(), graph()), InsufficientDataError);
}
