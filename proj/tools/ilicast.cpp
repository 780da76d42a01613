// ilicast command-line tool.
//
//   ilicast validate --data FILE [--schema FILE] [--config FILE] [--out DIR]
//   ilicast simulate [--config FILE] [--seed N] [--out DIR]
//   ilicast backtest --config FILE [--data FILE] [--schema FILE] [--out DIR] [--jobs N] [--resume] ...
//   ilicast score --out RUN_DIR
//   ilicast report --out RUN_DIR
//
// Exit codes: 0 ok, 1 usage, 2 validation, 3 run failure.

#include "ilicast/ilicast.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ilicast;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRun = 3;

struct Options {
	std::string config;
	std::string data;
	std::string schema;
	std::string out;
	int jobs = 0;
	std::uint64_t seed = 1;
	bool strict_paper_mode = false;
	bool debug_dumps = false;
	bool resume = false;
};

void write_json(const fs::path &path, const json &j) {
	if (path.has_parent_path()) {
		fs::create_directories(path.parent_path());
	}
	std::ofstream out(path, std::ios::trunc);
	if (!out) {
		throw Error("cannot write " + path.string());
	}
	out << j.dump(2) << '\n';
}

json metadata(const std::string &command, const std::string &config_hash, const std::string &data_hash) {
	return {{"command", command},
	        {"version", std::string(kVersion)},
	        {"config_hash", config_hash},
	        {"data_hash", data_hash}};
}

std::vector<Season> seasons_between(int first, int last) {
	std::vector<Season> out;
	for (int y = first; y <= last; ++y) {
		out.push_back(Season{y});
	}
	return out;
}

int cmd_validate(const Options &o) {
	const fs::path out_dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
	std::vector<Season> train = seasons_between(2010, 2014);
	std::vector<Season> test = seasons_between(2015, 2018);
	std::string config_hash;
	if (!o.config.empty()) {
		const auto text = csv::read_file(o.config);
		const auto rc = parse_run_config(text, fs::path(o.config).parent_path());
		train = rc.train_seasons;
		test = rc.test_seasons;
		config_hash = rc.hash();
	}
	json report = {{"data", o.data}, {"ok", false}};
	json errors = json::array();
	std::string data_hash;
	int code = 0;
	try {
		const Schema schema = o.schema.empty() ? Schema::canonical() : Schema::load(o.schema);
		auto result = parse_ili_csv(o.data, schema);
		const auto &table = result.table;
		data_hash = sha256_hex(canonical_csv(table));
		for (const auto &r : result.rejects) {
			errors.push_back({{"line", r.line}, {"reason", r.reason}, {"raw", r.raw}});
		}
		report["rows"] = table.rows().size();
		report["locations"] = table.locations();
		report["skipped_locations"] = result.skipped_locations;
		report["missing_values"] = result.missing_values;
		const auto audit = audit_dataset(table, train, test);
		json seasons = json::array();
		for (const auto &s : audit.seasons) {
			seasons.push_back({{"season", s.season},
			                   {"training", s.training},
			                   {"calendar_weeks", s.calendar_weeks},
			                   {"weeks_present", s.present}});
		}
		report["seasons"] = seasons;
		report["train_calendar_weeks"] = audit.train_calendar_weeks;
		report["test_calendar_weeks"] = audit.test_calendar_weeks;
		report["train_weeks"] = audit.train_weeks;
		report["test_weeks"] = audit.test_weeks;
		json incomplete = json::array();
		for (const auto &w : audit.incomplete_weeks) {
			incomplete.push_back(w.to_string());
		}
		report["incomplete_weeks"] = incomplete;
		if (!result.rejects.empty()) {
			code = kExitValidation;
		}
		std::cout << table.rows().size() << " rows, " << table.locations().size() << " locations, "
		          << result.rejects.size() << " rejected, " << result.skipped_locations
		          << " skipped (non-state locations), " << result.missing_values << " not reported\n";
		std::cout << "in-season calendar weeks: train " << audit.train_calendar_weeks << ", test "
		          << audit.test_calendar_weeks << '\n';
		for (const auto &s : audit.seasons) {
			std::size_t lo = s.calendar_weeks, hi = 0;
			for (const auto &[loc, n] : s.present) {
				lo = std::min(lo, n);
				hi = std::max(hi, n);
			}
			if (s.present.empty()) {
				lo = 0;
			}
			std::cout << "  " << s.season << (s.training ? " train" : " test ") << ": " << s.calendar_weeks
			          << " weeks, per-location present " << lo << ".." << hi << '\n';
		}
	} catch (const SchemaError &e) {
		errors.push_back({{"error", e.what()}});
		code = kExitValidation;
	} catch (const IntegrityError &e) {
		errors.push_back({{"error", e.what()}});
		code = kExitValidation;
	}
	report["errors"] = errors;
	report["ok"] = code == 0;
	for (const auto &e : errors) {
		std::cerr << (e.contains("line") ? "line " + std::to_string(e["line"].get<std::size_t>()) + ": " : "")
		          << (e.contains("reason") ? e["reason"].get<std::string>() : e["error"].get<std::string>()) << '\n';
	}
	write_json(out_dir / "validation_report.json", report);
	write_json(out_dir / "validate_metadata.json", metadata("validate", config_hash, data_hash));
	return code;
}

int cmd_simulate(const Options &o) {
	const fs::path out_dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
	std::string text;
	if (!o.config.empty()) {
		text = csv::read_file(o.config);
	}
	auto cfg = parse_synthetic_config(text);
	if (cfg.states.empty()) {
		cfg.states = all_states();
	}
	cfg.resolve_wave(AdjacencyGraph::load(std::string(ILICAST_DATA_DIR) + "/adjacency.csv", false));
	const auto data = generate_synthetic(cfg, o.seed);
	fs::create_directories(out_dir);
	const auto body = canonical_csv(data.table);
	std::ofstream(out_dir / "synthetic.csv", std::ios::binary | std::ios::trunc) << body;
	auto meta = metadata("simulate", sha256_hex(text), sha256_hex(body));
	meta["seed"] = o.seed;
	json draws = json::array();
	for (const auto &d : data.seasons) {
		draws.push_back({{"season", Season{d.start_year}.label()}, {"peak_offset", d.peak_offset}, {"amplitude", d.amplitude}});
	}
	meta["seasons"] = draws;
	write_json(out_dir / "simulate_metadata.json", meta);
	std::cout << "wrote " << data.table.rows().size() << " rows to " << (out_dir / "synthetic.csv").string() << '\n';
	return 0;
}

int cmd_backtest(const Options &o) {
	auto config = load_run_config(o.config);
	if (!o.data.empty()) {
		config.data_path = o.data;
	}
	if (!o.schema.empty()) {
		config.schema_path = o.schema;
	}
	if (!o.out.empty()) {
		config.output_dir = o.out;
	}
	if (o.jobs > 0) {
		config.jobs = o.jobs;
	}
	config.strict_paper_mode = config.strict_paper_mode || o.strict_paper_mode;
	config.debug_dumps = config.debug_dumps || o.debug_dumps;
	if (config.output_dir.empty()) {
		throw ConfigError("no output directory: set 'output' in the config or pass --out");
	}
	config.check();

	auto inputs = load_run_inputs(config);
	if (!inputs.rejects.empty()) {
		for (const auto &r : inputs.rejects) {
			std::cerr << "line " << r.line << ": " << r.reason << '\n';
		}
		throw IntegrityError(std::to_string(inputs.rejects.size()) + " data rows failed validation");
	}
	RunOptions opts;
	opts.resume = o.resume;
	opts.log = [](const std::string &msg) { std::clog << msg << '\n'; };
	const auto result = run_backtest(config, inputs.table, inputs.graph, opts);

	const auto prep_hash = sha256_hex(canonical_csv(inputs.table));
	auto meta = metadata("backtest", config.hash(), prep_hash);
	meta["small_constant"] = result.small_constant;
	meta["states"] = result.states;
	meta["target_weeks"] = result.target_weeks.size();
	meta["cells"] = result.stats.cells_total;
	meta["cells_loaded"] = result.stats.cells_loaded;
	meta["unavailable"] = result.stats.unavailable;
	write_json(fs::path(config.output_dir) / "backtest_metadata.json", meta);
	std::cout << result.stats.cells_total << " cells (" << result.stats.cells_loaded << " resumed, "
	          << result.stats.unavailable << " unavailable), " << result.stats.fits << " fits\n";
	return 0;
}

// Recomputes score files from the persisted forecasts of a finished run.
ScoreTable load_run_scores(const fs::path &dir) {
	const auto rows = load_complete_run(dir);
	return score_forecasts(rows);
}

json run_metadata(const std::string &command, const fs::path &dir) {
	const auto run = load_persisted_run(dir);
	return metadata(command, run.header.value("config_hash", std::string()), run.header.value("data_hash", std::string()));
}

int cmd_score(const Options &o) {
	const fs::path dir = o.out;
	const auto scores = load_run_scores(dir);
	write_score_outputs(dir, scores);
	write_json(dir / "score_metadata.json", run_metadata("score", dir));
	std::cout << scores.records().size() << " scored records, " << scores.unavailable().size() << " unavailable\n";
	return 0;
}

int cmd_report(const Options &o) {
	const fs::path dir = o.out;
	const auto scores = load_run_scores(dir);
	write_report(scores, dir / "report");
	write_json(dir / "report_metadata.json", run_metadata("report", dir));
	std::cout << report_summary_text(build_report(scores));
	return 0;
}

} // namespace

int main(int argc, char **argv) {
	CLI::App app{"ILI autoregressive forecasting backtests"};
	app.require_subcommand(1);
	Options o;

	auto *validate = app.add_subcommand("validate", "Check a data file and report in-season week counts");
	validate->add_option("--data", o.data, "ILI data CSV")->required();
	validate->add_option("--schema", o.schema, "Column mapping file");
	validate->add_option("--config", o.config, "Run config supplying the train/test seasons");
	validate->add_option("--out", o.out, "Directory for the report");

	auto *simulate = app.add_subcommand("simulate", "Generate a synthetic data file");
	simulate->add_option("--config", o.config, "Synthetic data config");
	simulate->add_option("--seed", o.seed, "Random seed");
	simulate->add_option("--out", o.out, "Output directory");

	auto *backtest = app.add_subcommand("backtest", "Run the rolling-origin backtest");
	backtest->add_option("--config", o.config, "Run config")->required();
	backtest->add_option("--data", o.data, "Override the data file");
	backtest->add_option("--schema", o.schema, "Override the schema file");
	backtest->add_option("--out", o.out, "Override the output directory");
	backtest->add_option("--jobs", o.jobs, "Worker threads");
	backtest->add_flag("--strict-paper-mode", o.strict_paper_mode, "Drop the intercept from isolated models");
	backtest->add_flag("--debug-dumps", o.debug_dumps, "Write design matrices, coefficients and tracker traces");
	backtest->add_flag("--resume", o.resume, "Continue a partial run in the output directory");

	auto *score = app.add_subcommand("score", "Recompute score tables of a finished run");
	score->add_option("--out", o.out, "Run directory")->required();

	auto *report = app.add_subcommand("report", "Within-class variant comparison of a finished run");
	report->add_option("--out", o.out, "Run directory")->required();

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError &e) {
		const int code = app.exit(e);
		return code == 0 ? 0 : kExitUsage;
	}

	try {
		if (*validate) {
			return cmd_validate(o);
		}
		if (*simulate) {
			return cmd_simulate(o);
		}
		if (*backtest) {
			return cmd_backtest(o);
		}
		if (*score) {
			return cmd_score(o);
		}
		if (*report) {
			return cmd_report(o);
		}
	} catch (const ConfigError &e) {
		std::cerr << "config error: " << e.what() << '\n';
		return kExitUsage;
	} catch (const SchemaError &e) {
		std::cerr << "validation error: " << e.what() << '\n';
		return kExitValidation;
	} catch (const IntegrityError &e) {
		std::cerr << "validation error: " << e.what() << '\n';
		return kExitValidation;
	} catch (const std::exception &e) {
		std::cerr << "error: " << e.what() << '\n';
		return kExitRun;
	}
	return kExitUsage;
}
