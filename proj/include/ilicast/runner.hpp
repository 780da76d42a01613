#pragma once

// Rolling-origin backtest.
//
// For each in-season target week w of the test seasons (origin t = w - 2),
// every (model, state) cell refits on all admissible rows with outcome week
// <= t, forecasts w, and wraps the point in tracker intervals. Weeks run in
// chronological order; cells within a week are independent and run on a
// worker pool. Each finished cell is appended to a per-model forecast file and
// recorded with a content hash in manifest.jsonl, which is what resume reads.

#include "ilicast/config.hpp"
#include "ilicast/conformal.hpp"
#include "ilicast/csv.hpp"
#include "ilicast/epiweek.hpp"
#include "ilicast/errors.hpp"
#include "ilicast/features.hpp"
#include "ilicast/geography.hpp"
#include "ilicast/hash.hpp"
#include "ilicast/ingest.hpp"
#include "ilicast/model_spec.hpp"
#include "ilicast/regression.hpp"
#include "ilicast/scoring.hpp"

#include <json.hpp>

#include <array>
#include <atomic>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ilicast {

namespace fs = std::filesystem;

// One (model, state, target week) cell as persisted.
struct ForecastRow {
	ModelSpec spec;
	std::string state;
	Epiweek week;    // target
	Epiweek origin;  // week - 2
	bool available = false;
	std::string reason;
	double point = 0;
	std::array<double, 3> radius{};
	double eta = 0;
	std::optional<double> truth;

	std::pair<double, double> bounds(std::size_t k) const {
		return {std::max(0.0, point - radius[k]), point + radius[k]};
	}

	ForecastRecord to_record() const {
		ForecastRecord r;
		r.spec = spec;
		r.state = state;
		r.week = week;
		r.point = point;
		r.median = point;
		for (std::size_t k = 0; k < 3; ++k) {
			const auto [lo, hi] = bounds(k);
			r.intervals.push_back({kLevels[k], lo, hi});
		}
		r.truth = truth;
		return r;
	}

	static constexpr std::string_view header = "class,variant,state,week,origin,available,point,lower_50,upper_50,"
	                                           "lower_80,upper_80,lower_95,upper_95,radius_50,radius_80,radius_95,"
	                                           "eta,truth,reason";

	std::string to_csv() const {
		csv::Record rec{std::string(to_string(spec.cls)), std::string(to_string(spec.variant)), state, week.to_string(),
		                origin.to_string(), available ? "1" : "0"};
		auto num = [&](double v) { return available ? csv::format_double(v) : std::string("NA"); };
		rec.push_back(num(point));
		for (std::size_t k = 0; k < 3; ++k) {
			const auto [lo, hi] = bounds(k);
			rec.push_back(num(lo));
			rec.push_back(num(hi));
		}
		for (std::size_t k = 0; k < 3; ++k) {
			rec.push_back(num(radius[k]));
		}
		rec.push_back(num(eta));
		rec.push_back(truth ? csv::format_double(*truth) : "NA");
		rec.push_back(reason);
		std::ostringstream s;
		csv::write_record(s, rec);
		auto line = s.str();
		line.pop_back();
		return line;
	}

	static ForecastRow from_csv(const csv::Record &rec) {
		if (rec.size() != 19) {
			throw ResumeError("forecast row has " + std::to_string(rec.size()) + " fields, expected 19");
		}
		ForecastRow r;
		r.spec = {parse_model_class(rec[0]), parse_variant(rec[1])};
		r.state = rec[2];
		r.week = Epiweek::parse(rec[3]);
		r.origin = Epiweek::parse(rec[4]);
		r.available = rec[5] == "1";
		auto num = [&](std::size_t i) {
			auto v = csv::parse_double(rec[i]);
			if (!v) {
				throw ResumeError("bad number '" + rec[i] + "' in forecast row");
			}
			return *v;
		};
		if (r.available) {
			r.point = num(6);
			for (std::size_t k = 0; k < 3; ++k) {
				r.radius[k] = num(13 + k);
			}
			r.eta = num(16);
		}
		if (rec[17] != "NA") {
			r.truth = num(17);
		}
		r.reason = rec[18];
		return r;
	}
};

using CellKey = std::tuple<ModelSpec, std::string, Epiweek>;

inline CellKey key_of(const ForecastRow &r) {
	return {r.spec, r.state, r.week};
}

// Passed to RunOptions::on_fit after every fit, serialized.
struct FitEvent {
	const FittedModel &model;
	const DesignMatrix &design;
	Epiweek origin;
	Epiweek target_week;
};

struct RunOptions {
	bool resume = false;
	// Stop after persisting this many newly computed cells (simulates an
	// interrupted run).
	std::optional<std::size_t> max_new_cells;
	std::function<void(const FitEvent &)> on_fit;
	std::function<void(const std::string &)> log;
};

struct RunStats {
	std::size_t cells_total = 0;
	std::size_t cells_loaded = 0;
	std::size_t cells_computed = 0;
	std::size_t unavailable = 0;
	std::size_t fits = 0;
	std::size_t pooled_fits = 0;
	std::size_t leakage_checks = 0;
	bool complete = false;
};

struct BacktestResult {
	std::vector<ForecastRow> forecasts; // ordered by (week, model, state)
	ScoreTable scores;                   // empty unless complete
	RunStats stats;
	double small_constant = 0;
	std::vector<std::string> states;
	std::vector<Epiweek> target_weeks;
};

namespace detail {

inline std::string forecast_file_name(const ModelSpec &s) {
	return std::string(to_string(s.cls)) + "__" + std::string(to_string(s.variant)) + ".csv";
}

inline std::string graph_fingerprint(const AdjacencyGraph &g) {
	std::string out;
	for (const auto &[a, ns] : g.edges()) {
		for (const auto &b : ns) {
			out += a + "," + b + "\n";
		}
	}
	return sha256_hex(out);
}

inline void write_text(const fs::path &p, const std::string &text) {
	std::ofstream out(p, std::ios::binary | std::ios::trunc);
	if (!out) {
		throw Error("cannot write " + p.string());
	}
	out << text;
}

struct TrackerSet {
	bool initialized = false;
	double eta = 0;
	std::array<TrackerState, 3> levels{};
	std::deque<std::pair<Epiweek, double>> pending; // (target week, |residual|)
};

inline void check_no_leakage(const DesignMatrix &m, const Epiweek &origin, const Epiweek &target) {
	for (const auto &u : m.outcome_times) {
		if (!(u <= origin && u < target)) {
			throw std::logic_error("leakage: training outcome " + u.to_string() + " not before origin " +
			                       origin.to_string() + " / target " + target.to_string());
		}
	}
}

struct PooledFit {
	std::shared_ptr<const FittedModel> model;
	std::shared_ptr<const DesignMatrix> design;
	std::string error;
};

struct CellWork {
	ModelSpec spec;
	std::string state;
	bool need_residuals = false;
	const ForecastRow *loaded = nullptr;
	// outputs
	ForecastRow row;
	std::vector<double> residuals;
	std::shared_ptr<const DesignMatrix> design;
	std::shared_ptr<const FittedModel> model;
};

} // namespace detail

// Everything the loop needs, derived once from config and inputs.
struct PreparedRun {
	FeatureContext ctx;
	std::vector<Epiweek> target_weeks;
	std::vector<ModelSpec> models;
	std::string config_hash;
	std::string data_hash;
	std::string adjacency_hash;
};

inline PreparedRun prepare_run(const RunConfig &config, const ObservationTable &table, const AdjacencyGraph &graph) {
	config.check();
	PreparedRun p;
	auto &ctx = p.ctx;
	ctx.table = &table;
	ctx.states = config.states.empty() ? table.states() : config.states;
	std::sort(ctx.states.begin(), ctx.states.end());
	if (ctx.states.empty()) {
		throw InsufficientDataError("no state rows in the data");
	}
	const auto present = table.states();
	for (const auto &s : ctx.states) {
		if (!std::binary_search(present.begin(), present.end(), s)) {
			throw InsufficientDataError("no data for state " + s);
		}
	}
	ctx.graph = graph.restricted_to(ctx.states);
	ctx.national = us_average_series(table, ctx.states);
	ctx.eps = config.epsilon;
	ctx.c = compute_small_constant(table, ctx.states, config.train_seasons);
	ctx.strict_paper_mode = config.strict_paper_mode;
	for (const auto &seasons : {config.train_seasons, config.test_seasons}) {
		for (const auto &s : seasons) {
			for (const auto &w : s.weeks()) {
				ctx.outcome_weeks.push_back(w);
			}
		}
	}
	std::sort(ctx.outcome_weeks.begin(), ctx.outcome_weeks.end());
	for (const auto &s : config.test_seasons) {
		for (const auto &w : s.weeks()) {
			p.target_weeks.push_back(w);
		}
	}
	const Epiweek first_origin = p.target_weeks.front().plus(-kHorizon);
	bool any_training = false;
	for (const auto &s : ctx.states) {
		for (const auto &u : ctx.outcome_weeks) {
			if (u > first_origin) {
				break;
			}
			any_training = any_training || table.pct(s, u).has_value();
		}
	}
	if (!any_training) {
		throw InsufficientDataError("no training observations up to the first forecast origin " +
		                            first_origin.to_string());
	}
	p.models = config.models;
	std::sort(p.models.begin(), p.models.end());
	p.models.erase(std::unique(p.models.begin(), p.models.end()), p.models.end());
	p.config_hash = config.hash();
	p.data_hash = sha256_hex(canonical_csv(table));
	p.adjacency_hash = detail::graph_fingerprint(ctx.graph);
	return p;
}

// Manifest and forecast files of a run directory.
struct PersistedRun {
	nlohmann::json header;
	std::map<CellKey, ForecastRow> cells;
};

inline PersistedRun load_persisted_run(const fs::path &dir) {
	const auto manifest_path = dir / "manifest.jsonl";
	std::ifstream in(manifest_path);
	if (!in) {
		throw ResumeError("no manifest in " + dir.string());
	}
	PersistedRun run;
	std::map<CellKey, std::string> hashes;
	std::string line;
	std::size_t lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (csv::trim(line).empty()) {
			continue;
		}
		nlohmann::json j;
		try {
			j = nlohmann::json::parse(line);
		} catch (const nlohmann::json::exception &e) {
			throw ResumeError("corrupt manifest at line " + std::to_string(lineno) + ": " + e.what());
		}
		try {
			if (lineno == 1) {
				if (j.at("type") != "header") {
					throw ResumeError("manifest does not start with a header");
				}
				run.header = j;
				continue;
			}
			if (j.at("type") != "cell") {
				throw ResumeError("unexpected manifest entry at line " + std::to_string(lineno));
			}
			CellKey k{ModelSpec{parse_model_class(j.at("class").get<std::string>()),
			                    parse_variant(j.at("variant").get<std::string>())},
			          j.at("state").get<std::string>(), Epiweek::parse(j.at("week").get<std::string>())};
			hashes[k] = j.at("hash").get<std::string>();
		} catch (const nlohmann::json::exception &e) {
			throw ResumeError("corrupt manifest at line " + std::to_string(lineno) + ": " + e.what());
		} catch (const ConfigError &e) {
			throw ResumeError("corrupt manifest at line " + std::to_string(lineno) + ": " + e.what());
		} catch (const DomainError &e) {
			throw ResumeError("corrupt manifest at line " + std::to_string(lineno) + ": " + e.what());
		}
	}
	if (run.header.is_null()) {
		throw ResumeError("empty manifest in " + dir.string());
	}
	// Lines present in forecast files but absent from the manifest were written
	// by an interrupted append and are discarded.
	if (fs::exists(dir / "forecasts")) {
		for (const auto &entry : fs::directory_iterator(dir / "forecasts")) {
			std::ifstream f(entry.path());
			std::string l;
			std::getline(f, l);
			while (std::getline(f, l)) {
				if (l.empty()) {
					continue;
				}
				std::istringstream ls(l);
				csv::Record rec;
				csv::read_record(ls, rec);
				ForecastRow row;
				try {
					row = ForecastRow::from_csv(rec);
				} catch (const ResumeError &) {
					continue;
				}
				auto it = hashes.find(key_of(row));
				if (it != hashes.end() && it->second == sha256_hex(l)) {
					run.cells[key_of(row)] = row;
				}
			}
		}
	}
	for (const auto &[k, h] : hashes) {
		if (!run.cells.contains(k)) {
			throw ResumeError("manifest lists cell " + std::get<0>(k).name() + " " + std::get<1>(k) + " " +
			                  std::get<2>(k).to_string() + " but its forecast line is missing or altered");
		}
	}
	return run;
}

inline ScoreTable score_forecasts(std::span<const ForecastRow> rows) {
	std::vector<ScoreRecord> scored;
	std::vector<UnavailableCell> unavailable;
	for (const auto &r : rows) {
		if (r.available && r.truth) {
			scored.push_back(score_forecast(r.to_record()));
		} else {
			unavailable.push_back({r.spec, r.state, r.week, r.available ? "no realized value" : r.reason});
		}
	}
	return ScoreTable(std::move(scored), std::move(unavailable));
}

inline void write_score_outputs(const fs::path &dir, const ScoreTable &scores) {
	{
		std::ofstream out(dir / "scores.csv", std::ios::trunc);
		write_scores_csv(scores, out);
	}
	{
		std::ofstream out(dir / "aggregate_by_state.csv", std::ios::trunc);
		write_aggregates_by_state(scores, out);
	}
	{
		std::ofstream out(dir / "aggregate_by_week.csv", std::ios::trunc);
		write_aggregates_by_week(scores, out);
	}
	{
		std::ofstream out(dir / "unavailable.csv", std::ios::trunc);
		out << "class,variant,state,week,reason\n";
		for (const auto &u : scores.unavailable()) {
			csv::write_record(out, {std::string(to_string(u.spec.cls)), std::string(to_string(u.spec.variant)), u.state,
			                        u.week.to_string(), u.reason});
		}
	}
}

// Expected cells of a run directory, from cells.json written at run start.
inline std::vector<CellKey> expected_cells(const fs::path &dir) {
	std::ifstream in(dir / "cells.json");
	if (!in) {
		throw ResumeError("no cells.json in " + dir.string());
	}
	nlohmann::json j;
	try {
		j = nlohmann::json::parse(in);
	} catch (const nlohmann::json::exception &e) {
		throw ResumeError(std::string("corrupt cells.json: ") + e.what());
	}
	std::vector<CellKey> out;
	for (const auto &w : j.at("weeks")) {
		for (const auto &m : j.at("models")) {
			const auto spec = ModelSpec{parse_model_class(m.at(0).get<std::string>()), parse_variant(m.at(1).get<std::string>())};
			for (const auto &s : j.at("states")) {
				out.emplace_back(spec, s.get<std::string>(), Epiweek::parse(w.get<std::string>()));
			}
		}
	}
	return out;
}

// Loads a finished run; throws naming the missing cells when incomplete.
inline std::vector<ForecastRow> load_complete_run(const fs::path &dir) {
	const auto run = load_persisted_run(dir);
	const auto expected = expected_cells(dir);
	std::vector<std::string> missing;
	std::vector<ForecastRow> rows;
	for (const auto &k : expected) {
		auto it = run.cells.find(k);
		if (it == run.cells.end()) {
			missing.push_back(std::get<0>(k).name() + ":" + std::get<1>(k) + "@" + std::get<2>(k).to_string());
		} else {
			rows.push_back(it->second);
		}
	}
	if (!missing.empty()) {
		std::string msg = "run in " + dir.string() + " is incomplete; " + std::to_string(missing.size()) +
		                  " missing cells:";
		for (std::size_t i = 0; i < missing.size() && i < 10; ++i) {
			msg += " " + missing[i];
		}
		if (missing.size() > 10) {
			msg += " ...";
		}
		throw ResumeError(msg);
	}
	return rows;
}

inline BacktestResult run_backtest(const RunConfig &config, const ObservationTable &table, const AdjacencyGraph &graph,
                                   const RunOptions &options = {}) {
	const PreparedRun prep = prepare_run(config, table, graph);
	const auto &ctx = prep.ctx;
	auto log = [&](const std::string &msg) {
		if (options.log) {
			options.log(msg);
		}
	};

	BacktestResult result;
	result.small_constant = ctx.c;
	result.states = ctx.states;
	result.target_weeks = prep.target_weeks;
	auto &stats = result.stats;
	stats.cells_total = prep.target_weeks.size() * prep.models.size() * ctx.states.size();

	// Persistence.
	const bool persist = !config.output_dir.empty();
	const fs::path out_dir = config.output_dir;
	std::map<CellKey, ForecastRow> loaded;
	std::map<ModelSpec, std::ofstream> forecast_files;
	std::ofstream manifest;
	std::ofstream trace;
	std::ofstream coef_dump;
	if (persist) {
		fs::create_directories(out_dir / "forecasts");
		nlohmann::json header = {{"type", "header"},          {"config_hash", prep.config_hash},
		                         {"data_hash", prep.data_hash}, {"adjacency_hash", prep.adjacency_hash},
		                         {"version", std::string(kVersion)}};
		if (options.resume && fs::exists(out_dir / "manifest.jsonl")) {
			auto run = load_persisted_run(out_dir);
			for (const char *k : {"config_hash", "data_hash", "adjacency_hash"}) {
				if (run.header.value(k, std::string()) != header[k].get<std::string>()) {
					throw ResumeError(std::string("manifest ") + k + " does not match the current configuration");
				}
			}
			loaded = std::move(run.cells);
			// Rewrite forecast files and manifest with confirmed cells only.
			std::map<ModelSpec, std::vector<const ForecastRow *>> by_spec;
			for (const auto &[k, r] : loaded) {
				by_spec[r.spec].push_back(&r);
			}
			for (const auto &entry : fs::directory_iterator(out_dir / "forecasts")) {
				fs::remove(entry.path());
			}
			std::ofstream m(out_dir / "manifest.jsonl", std::ios::trunc);
			m << header.dump() << '\n';
			std::vector<const ForecastRow *> ordered;
			for (const auto &[k, r] : loaded) {
				ordered.push_back(&r);
			}
			std::sort(ordered.begin(), ordered.end(), [](const ForecastRow *a, const ForecastRow *b) {
				return std::tie(a->week, a->spec, a->state) < std::tie(b->week, b->spec, b->state);
			});
			std::map<ModelSpec, std::ofstream> files;
			for (const auto *r : ordered) {
				auto &f = files[r->spec];
				if (!f.is_open()) {
					f.open(out_dir / "forecasts" / detail::forecast_file_name(r->spec), std::ios::trunc);
					f << ForecastRow::header << '\n';
				}
				const auto line = r->to_csv();
				f << line << '\n';
				nlohmann::json cell = {{"type", "cell"},
				                       {"class", to_string(r->spec.cls)},
				                       {"variant", to_string(r->spec.variant)},
				                       {"state", r->state},
				                       {"week", r->week.to_string()},
				                       {"hash", sha256_hex(line)}};
				m << cell.dump() << '\n';
			}
			log("resuming with " + std::to_string(loaded.size()) + " completed cells");
		} else {
			if (options.resume) {
				throw ResumeError("nothing to resume in " + out_dir.string());
			}
			fs::remove(out_dir / "manifest.jsonl");
			for (const auto &entry : fs::directory_iterator(out_dir / "forecasts")) {
				fs::remove(entry.path());
			}
			std::ofstream m(out_dir / "manifest.jsonl", std::ios::trunc);
			m << header.dump() << '\n';
		}
		{
			nlohmann::json cells;
			cells["models"] = nlohmann::json::array();
			for (const auto &m : prep.models) {
				cells["models"].push_back({to_string(m.cls), to_string(m.variant)});
			}
			cells["states"] = ctx.states;
			cells["weeks"] = nlohmann::json::array();
			for (const auto &w : prep.target_weeks) {
				cells["weeks"].push_back(w.to_string());
			}
			detail::write_text(out_dir / "cells.json", cells.dump(1) + "\n");
			detail::write_text(out_dir / "run_config.txt", config.canonical());
		}
		manifest.open(out_dir / "manifest.jsonl", std::ios::app);
		for (const auto &m : prep.models) {
			const auto path = out_dir / "forecasts" / detail::forecast_file_name(m);
			const bool fresh = !fs::exists(path);
			forecast_files[m].open(path, std::ios::app);
			if (fresh) {
				forecast_files[m] << ForecastRow::header << '\n';
			}
		}
		if (config.debug_dumps) {
			fs::create_directories(out_dir / "debug" / "design");
			trace.open(out_dir / "debug" / "tracker_trace.csv", std::ios::trunc);
			trace << "class,variant,state,level,week,score,radius_before,radius_after\n";
			coef_dump.open(out_dir / "debug" / "coefficients.csv", std::ios::trunc);
			coef_dump << "class,variant,target,fit_time,column_name,value\n";
		}
	}
	stats.cells_loaded = 0;

	std::map<std::pair<ModelSpec, std::string>, detail::TrackerSet> trackers;
	std::mutex hook_mutex;
	std::atomic<std::size_t> fits{0};
	std::atomic<std::size_t> leakage_checks{0};
	std::size_t new_cells = 0;

	auto notify_fit = [&](const FittedModel &m, const DesignMatrix &d, const Epiweek &origin, const Epiweek &target) {
		detail::check_no_leakage(d, origin, target);
		++leakage_checks;
		++fits;
		if (options.on_fit) {
			std::lock_guard lock(hook_mutex);
			options.on_fit(FitEvent{m, d, origin, target});
		}
	};

	auto run_parallel = [&](std::size_t count, const std::function<void(std::size_t)> &fn) {
		const std::size_t width = std::min<std::size_t>(static_cast<std::size_t>(config.jobs), std::max<std::size_t>(count, 1));
		if (width <= 1) {
			for (std::size_t i = 0; i < count; ++i) {
				fn(i);
			}
			return;
		}
		std::atomic<std::size_t> next{0};
		std::exception_ptr failure;
		std::mutex failure_mutex;
		std::vector<std::thread> pool;
		for (std::size_t k = 0; k < width; ++k) {
			pool.emplace_back([&] {
				for (std::size_t i = next++; i < count; i = next++) {
					try {
						fn(i);
					} catch (...) {
						std::lock_guard lock(failure_mutex);
						if (!failure) {
							failure = std::current_exception();
						}
					}
				}
			});
		}
		for (auto &t : pool) {
			t.join();
		}
		if (failure) {
			std::rethrow_exception(failure);
		}
	};

	for (const auto &week : prep.target_weeks) {
		const Epiweek origin = week.plus(-kHorizon);

		std::vector<detail::CellWork> cells;
		for (const auto &spec : prep.models) {
			for (const auto &state : ctx.states) {
				detail::CellWork c;
				c.spec = spec;
				c.state = state;
				if (auto it = loaded.find({spec, state, week}); it != loaded.end()) {
					c.loaded = &it->second;
				}
				c.need_residuals = !trackers[{spec, state}].initialized;
				cells.push_back(std::move(c));
			}
		}

		// One pooled fit per class per week, shared by every state.
		std::map<ModelClass, detail::PooledFit> pooled;
		for (const auto &spec : prep.models) {
			if (spec.variant != Variant::GeoPooled) {
				continue;
			}
			const bool needed = std::any_of(cells.begin(), cells.end(), [&](const detail::CellWork &c) {
				return c.spec == spec && !c.loaded;
			});
			if (!needed) {
				continue;
			}
			auto &pf = pooled[spec.cls];
			try {
				auto design = std::make_shared<DesignMatrix>(build_training_matrix(spec, ctx.states.front(), ctx, origin));
				auto model = std::make_shared<FittedModel>(fit_model(spec, *design, "pooled", origin));
				notify_fit(*model, *design, origin, week);
				++stats.pooled_fits;
				pf.design = std::move(design);
				pf.model = std::move(model);
			} catch (const FitError &e) {
				pf.error = e.what();
			} catch (const ContractError &e) {
				pf.error = e.what();
			}
		}

		run_parallel(cells.size(), [&](std::size_t i) {
			auto &c = cells[i];
			if (c.loaded) {
				return;
			}
			auto &row = c.row;
			row.spec = c.spec;
			row.state = c.state;
			row.week = week;
			row.origin = origin;
			row.truth = ctx.table->pct(c.state, week);
			auto unavailable = [&](std::string reason) {
				row.available = false;
				row.reason = std::move(reason);
			};

			if (c.spec.cls == ModelClass::Lvcf) {
				auto p = lvcf_predict(*ctx.table, c.state, origin);
				if (!p) {
					return unavailable("missing %ILI for " + c.state + " at " + origin.to_string());
				}
				row.available = true;
				row.point = *p;
				if (c.need_residuals) {
					for (const auto &u : ctx.outcome_weeks) {
						if (u > origin) {
							break;
						}
						auto y = ctx.table->pct(c.state, u);
						auto x = ctx.table->pct(c.state, u.plus(-kHorizon));
						if (y && x) {
							c.residuals.push_back(std::abs(*y - *x));
						}
					}
				}
				return;
			}

			auto pr = build_prediction_row(c.spec, c.state, ctx, origin);
			if (!pr.row) {
				return unavailable(pr.reason);
			}
			try {
				std::shared_ptr<const FittedModel> model;
				std::shared_ptr<const DesignMatrix> design;
				if (c.spec.variant == Variant::GeoPooled) {
					const auto &pf = pooled.at(c.spec.cls);
					if (!pf.model) {
						return unavailable("pooled fit failed: " + pf.error);
					}
					model = pf.model;
					design = pf.design;
				} else {
					auto d = std::make_shared<DesignMatrix>(build_training_matrix(c.spec, c.state, ctx, origin));
					auto m = std::make_shared<FittedModel>(fit_model(c.spec, *d, c.state, origin));
					notify_fit(*m, *d, origin, week);
					design = std::move(d);
					model = std::move(m);
				}
				row.point = predict(*model, *pr.row);
				if (!std::isfinite(row.point)) {
					return unavailable("non-finite prediction");
				}
				row.available = true;
				if (c.need_residuals) {
					const auto fitted = fitted_pct(*model, *design);
					for (Eigen::Index k = 0; k < design->rows(); ++k) {
						if (design->targets[static_cast<std::size_t>(k)] == c.state) {
							c.residuals.push_back(std::abs(design->outcome_pct(k) - fitted(k)));
						}
					}
				}
				if (config.debug_dumps) {
					c.design = design;
					c.model = model;
				}
			} catch (const FitError &e) {
				return unavailable(e.what());
			} catch (const ContractError &e) {
				return unavailable(e.what());
			}
		});

		// Sequential: trackers, persistence.
		for (auto &c : cells) {
			auto &ts = trackers[{c.spec, c.state}];
			while (!ts.pending.empty() && ts.pending.front().first <= origin) {
				const auto [w, score] = ts.pending.front();
				ts.pending.pop_front();
				for (std::size_t k = 0; k < 3; ++k) {
					const double before = ts.levels[k].radius;
					ts.levels[k] = update(ts.levels[k], score);
					if (trace.is_open()) {
						trace << to_string(c.spec.cls) << ',' << to_string(c.spec.variant) << ',' << c.state << ','
						      << csv::format_double(kLevels[k]) << ',' << w.to_string() << ','
						      << csv::format_double(score) << ',' << csv::format_double(before) << ','
						      << csv::format_double(ts.levels[k].radius) << '\n';
					}
				}
			}

			ForecastRow row;
			if (c.loaded) {
				row = *c.loaded;
				if (row.available) {
					if (!ts.initialized) {
						ts.initialized = true;
						ts.eta = row.eta;
						for (std::size_t k = 0; k < 3; ++k) {
							ts.levels[k] = TrackerState{kLevels[k], row.radius[k], row.eta, 0};
						}
					}
					for (std::size_t k = 0; k < 3; ++k) {
						if (ts.levels[k].radius != row.radius[k] || ts.eta != row.eta) {
							throw ResumeError("persisted tracker state for " + c.spec.name() + " " + c.state + " " +
							                  week.to_string() + " disagrees with replay");
						}
					}
				}
				++stats.cells_loaded;
			} else {
				row = std::move(c.row);
				if (row.available && !ts.initialized) {
					if (c.residuals.empty()) {
						row.available = false;
						row.reason = "no training residuals to initialize intervals";
					} else {
						ts.initialized = true;
						ts.eta = config.eta_scale * empirical_quantile(c.residuals, config.eta_quantile);
						for (std::size_t k = 0; k < 3; ++k) {
							ts.levels[k] = init_tracker(c.residuals, kLevels[k], ts.eta);
						}
					}
				}
				if (row.available) {
					row.eta = ts.eta;
					for (std::size_t k = 0; k < 3; ++k) {
						row.radius[k] = ts.levels[k].radius;
					}
				}
				++stats.cells_computed;
			}
			if (!row.available) {
				++stats.unavailable;
				log("unavailable " + row.spec.name() + " " + row.state + " " + row.week.to_string() + ": " + row.reason);
			} else if (row.truth) {
				ts.pending.emplace_back(week, std::abs(*row.truth - row.point));
			}

			if (persist && !c.loaded) {
				const auto line = row.to_csv();
				auto &f = forecast_files.at(row.spec);
				f << line << '\n';
				f.flush();
				nlohmann::json cell = {{"type", "cell"},
				                       {"class", to_string(row.spec.cls)},
				                       {"variant", to_string(row.spec.variant)},
				                       {"state", row.state},
				                       {"week", row.week.to_string()},
				                       {"hash", sha256_hex(line)}};
				manifest << cell.dump() << '\n';
				manifest.flush();
				if (config.debug_dumps && c.design) {
					const bool pooled_cell = c.spec.variant == Variant::GeoPooled;
					const std::string target = pooled_cell ? "pooled" : c.state;
					const auto name = std::string(to_string(c.spec.cls)) + "_" + std::string(to_string(c.spec.variant)) +
					                  "_" + target + "_" + origin.to_string() + ".csv";
					const auto path = out_dir / "debug" / "design" / name;
					if (!fs::exists(path)) {
						std::ofstream d(path);
						write_design_csv(*c.design, d);
						write_coefficients_csv(*c.model, coef_dump, false);
					}
				}
			}
			result.forecasts.push_back(std::move(row));
			if (!c.loaded) {
				++new_cells;
				if (options.max_new_cells && new_cells >= *options.max_new_cells) {
					stats.fits = fits;
					stats.leakage_checks = leakage_checks;
					log("stopping after " + std::to_string(new_cells) + " new cells");
					return result;
				}
			}
		}
	}

	stats.fits = fits;
	stats.leakage_checks = leakage_checks;
	stats.complete = true;
	result.scores = score_forecasts(result.forecasts);
	if (persist) {
		manifest.close();
		for (auto &[spec, f] : forecast_files) {
			f.close();
		}
		write_score_outputs(out_dir, result.scores);
	}
	return result;
}

// Loads data, schema and adjacency named by the config.
struct RunInputs {
	ObservationTable table;
	AdjacencyGraph graph;
	std::vector<RejectedRow> rejects;
};

inline RunInputs load_run_inputs(const RunConfig &config) {
	if (config.data_path.empty()) {
		throw ConfigError("config does not name a data file");
	}
	const Schema schema = config.schema_path.empty() ? Schema::canonical() : Schema::load(config.schema_path);
	auto ingest = parse_ili_csv(config.data_path, schema);
	RunInputs in;
	in.table = std::move(ingest.table);
	in.rejects = std::move(ingest.rejects);
	in.graph = AdjacencyGraph::load(config.adjacency_path, config.symmetrize_adjacency);
	return in;
}

} // namespace ilicast
