#pragma once

// Run configuration in a key = value file format.

#include "ilicast/csv.hpp"
#include "ilicast/epiweek.hpp"
#include "ilicast/errors.hpp"
#include "ilicast/geography.hpp"
#include "ilicast/hash.hpp"
#include "ilicast/model_spec.hpp"
#include "ilicast/synthetic.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef ILICAST_DATA_DIR
#define ILICAST_DATA_DIR "data"
#endif

namespace ilicast {

// Ordered key = value pairs; '#' starts a comment line. Unknown keys are
// reported by the consumer, not here.
class KeyValues {
public:
	static KeyValues parse(std::string_view text) {
		KeyValues kv;
		std::istringstream in{std::string(text)};
		std::string line;
		int lineno = 0;
		while (std::getline(in, line)) {
			++lineno;
			const auto t = csv::trim(line);
			if (t.empty() || t.front() == '#') {
				continue;
			}
			const auto eq = t.find('=');
			if (eq == std::string_view::npos) {
				throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
			}
			std::string key(csv::trim(t.substr(0, eq)));
			if (kv.values_.contains(key)) {
				throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
			}
			kv.values_[key] = std::string(csv::trim(t.substr(eq + 1)));
		}
		return kv;
	}

	bool has(const std::string &key) const {
		return values_.contains(key);
	}

	std::string get(const std::string &key, const std::string &fallback = {}) const {
		used_.insert(key);
		auto it = values_.find(key);
		return it == values_.end() ? fallback : it->second;
	}

	double get_double(const std::string &key, double fallback) const {
		if (!has(key)) {
			used_.insert(key);
			return fallback;
		}
		auto v = csv::parse_double(get(key));
		if (!v) {
			throw ConfigError("key '" + key + "' must be a number");
		}
		return *v;
	}

	long long get_int(const std::string &key, long long fallback) const {
		if (!has(key)) {
			used_.insert(key);
			return fallback;
		}
		auto v = csv::parse_int(get(key));
		if (!v) {
			throw ConfigError("key '" + key + "' must be an integer");
		}
		return *v;
	}

	bool get_bool(const std::string &key, bool fallback) const {
		if (!has(key)) {
			used_.insert(key);
			return fallback;
		}
		const auto v = get(key);
		if (v == "true" || v == "1" || v == "yes") {
			return true;
		}
		if (v == "false" || v == "0" || v == "no") {
			return false;
		}
		throw ConfigError("key '" + key + "' must be true or false");
	}

	std::vector<std::string> get_list(const std::string &key) const {
		std::vector<std::string> out;
		std::string cur;
		for (char c : get(key)) {
			if (c == ',') {
				if (auto t = csv::trim(cur); !t.empty()) {
					out.emplace_back(t);
				}
				cur.clear();
			} else {
				cur.push_back(c);
			}
		}
		if (auto t = csv::trim(cur); !t.empty()) {
			out.emplace_back(t);
		}
		return out;
	}

	void reject_unknown() const {
		for (const auto &[k, v] : values_) {
			if (!used_.contains(k)) {
				throw ConfigError("unknown config key '" + k + "'");
			}
		}
	}

private:
	std::map<std::string, std::string> values_;
	mutable std::set<std::string> used_;
};

inline std::string join(const std::vector<std::string> &items, const std::string &sep = ",") {
	std::string out;
	for (std::size_t i = 0; i < items.size(); ++i) {
		out += (i ? sep : "") + items[i];
	}
	return out;
}

struct RunConfig {
	std::string data_path;
	std::string schema_path;     // empty: canonical column names
	std::string adjacency_path = std::string(ILICAST_DATA_DIR) + "/adjacency.csv";
	bool symmetrize_adjacency = false;
	std::vector<Season> train_seasons;
	std::vector<Season> test_seasons;
	std::vector<std::string> states;  // empty: every state present in the data
	std::vector<ModelSpec> models = all_model_specs();
	double epsilon = 0.05;
	double eta_scale = 0.1;           // step size = eta_scale * eta_quantile of training |residuals|
	double eta_quantile = 0.9;
	std::string output_dir;
	int jobs = 1;
	bool strict_paper_mode = false;
	bool debug_dumps = false;

	// First target week of the test period.
	Epiweek first_test_week() const {
		return test_seasons.front().first_week();
	}

	void check() const {
		if (train_seasons.empty() || test_seasons.empty()) {
			throw ConfigError("train_seasons and test_seasons must both be set");
		}
		if (!std::is_sorted(train_seasons.begin(), train_seasons.end()) ||
		    !std::is_sorted(test_seasons.begin(), test_seasons.end())) {
			throw ConfigError("seasons must be listed in chronological order");
		}
		if (!(train_seasons.back() < test_seasons.front())) {
			throw ConfigError("test seasons must come strictly after training seasons");
		}
		for (const auto &s : states) {
			if (!is_state_code(s)) {
				throw ConfigError("unknown state '" + s + "'");
			}
		}
		if (models.empty()) {
			throw ConfigError("no models configured");
		}
		for (const auto &m : models) {
			m.check();
		}
		if (!(epsilon > 0)) {
			throw ConfigError("epsilon must be positive");
		}
		if (!(eta_scale >= 0) || !(eta_quantile > 0 && eta_quantile < 1)) {
			throw ConfigError("eta_scale must be nonnegative and eta_quantile in (0, 1)");
		}
		if (jobs < 1) {
			throw ConfigError("jobs must be at least 1");
		}
	}

	// Settings that determine results, one per line in a fixed order. Output
	// location, parallelism and debug dumps are excluded.
	std::string canonical() const {
		std::ostringstream s;
		auto seasons = [](const std::vector<Season> &v) {
			std::vector<std::string> out;
			for (const auto &x : v) {
				out.push_back(x.label());
			}
			return join(out);
		};
		std::vector<std::string> models_s;
		for (const auto &m : models) {
			models_s.push_back(m.name());
		}
		s << "train_seasons = " << seasons(train_seasons) << '\n'
		  << "test_seasons = " << seasons(test_seasons) << '\n'
		  << "states = " << join(states) << '\n'
		  << "models = " << join(models_s) << '\n'
		  << "epsilon = " << csv::format_double(epsilon) << '\n'
		  << "eta_scale = " << csv::format_double(eta_scale) << '\n'
		  << "eta_quantile = " << csv::format_double(eta_quantile) << '\n'
		  << "symmetrize_adjacency = " << (symmetrize_adjacency ? "true" : "false") << '\n'
		  << "strict_paper_mode = " << (strict_paper_mode ? "true" : "false") << '\n';
		return s.str();
	}

	std::string hash() const {
		return sha256_hex(canonical());
	}
};

namespace detail {

inline std::string resolve_path(const std::string &p, const std::filesystem::path &base) {
	if (p.empty()) {
		return p;
	}
	std::filesystem::path path(p);
	return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

inline std::vector<Season> parse_seasons(const std::vector<std::string> &items) {
	std::vector<Season> out;
	for (const auto &s : items) {
		out.push_back(Season::parse(s));
	}
	return out;
}

} // namespace detail

// Relative paths resolve against base_dir (the config file's directory).
inline RunConfig parse_run_config(std::string_view text, const std::filesystem::path &base_dir = ".") {
	const auto kv = KeyValues::parse(text);
	RunConfig c;
	c.data_path = detail::resolve_path(kv.get("data"), base_dir);
	c.schema_path = detail::resolve_path(kv.get("schema"), base_dir);
	if (kv.has("adjacency")) {
		c.adjacency_path = detail::resolve_path(kv.get("adjacency"), base_dir);
	}
	c.symmetrize_adjacency = kv.get_bool("symmetrize_adjacency", false);
	c.train_seasons = detail::parse_seasons(kv.get_list("train_seasons"));
	c.test_seasons = detail::parse_seasons(kv.get_list("test_seasons"));
	c.states = kv.get_list("states");
	if (kv.has("classes") || kv.has("variants")) {
		std::vector<ModelClass> classes;
		for (const auto &s : kv.has("classes") ? kv.get_list("classes") : std::vector<std::string>{"linear", "quantile", "poisson", "lvcf"}) {
			classes.push_back(parse_model_class(s));
		}
		std::vector<Variant> variants;
		for (const auto &s : kv.has("variants") ? kv.get_list("variants")
		                                        : std::vector<std::string>{"isolated", "neighbors", "isolated_us",
		                                                                   "neighbors_us", "geo_pooled"}) {
			const auto v = parse_variant(s);
			if (v == Variant::Baseline) {
				throw ConfigError("'baseline' is implied by class lvcf; list regression variants only");
			}
			variants.push_back(v);
		}
		std::set<ModelSpec> models;
		for (auto cls : classes) {
			if (cls == ModelClass::Lvcf) {
				models.insert(ModelSpec::lvcf());
				continue;
			}
			for (auto v : variants) {
				models.insert({cls, v});
			}
		}
		c.models.assign(models.begin(), models.end());
	}
	c.epsilon = kv.get_double("epsilon", c.epsilon);
	c.eta_scale = kv.get_double("eta_scale", c.eta_scale);
	c.eta_quantile = kv.get_double("eta_quantile", c.eta_quantile);
	c.output_dir = detail::resolve_path(kv.get("output"), base_dir);
	c.jobs = static_cast<int>(kv.get_int("jobs", 1));
	c.strict_paper_mode = kv.get_bool("strict_paper_mode", false);
	c.debug_dumps = kv.get_bool("debug_dumps", false);
	kv.reject_unknown();
	c.check();
	return c;
}

inline RunConfig load_run_config(const std::string &path) {
	return parse_run_config(csv::read_file(path), std::filesystem::path(path).parent_path());
}

// Synthetic data settings. Per-state overrides use keys "<STATE>.<field>",
// e.g. "PA.peak_shift = -1".
inline SyntheticConfig parse_synthetic_config(std::string_view text) {
	const auto kv = KeyValues::parse(text);
	SyntheticConfig c;
	c.first_season = static_cast<int>(kv.get_int("first_season", c.first_season));
	c.num_seasons = static_cast<int>(kv.get_int("num_seasons", c.num_seasons));
	c.states = kv.get_list("states");
	auto read_curve = [&](const std::string &prefix, StateCurve base) {
		base.baseline = kv.get_double(prefix + "baseline", base.baseline);
		base.peak = kv.get_double(prefix + "peak", base.peak);
		base.noise = kv.get_double(prefix + "noise", base.noise);
		base.peak_shift = kv.get_double(prefix + "peak_shift", base.peak_shift);
		base.visits = kv.get_double(prefix + "visits", base.visits);
		base.providers = kv.get_double(prefix + "providers", base.providers);
		return base;
	};
	c.defaults = read_curve("", c.defaults);
	for (const auto &s : c.states) {
		const std::string prefix = s + ".";
		for (const char *f : {"baseline", "peak", "noise", "peak_shift", "visits", "providers"}) {
			if (kv.has(prefix + f)) {
				c.overrides[s] = read_curve(prefix, c.defaults);
				break;
			}
		}
	}
	c.correlation = kv.get_double("correlation", c.correlation);
	c.ar_coef = kv.get_double("ar_coef", c.ar_coef);
	c.peak_week = kv.get_double("peak_week", c.peak_week);
	c.width = kv.get_double("width", c.width);
	c.peak_week_jitter = kv.get_double("peak_week_jitter", c.peak_week_jitter);
	c.amplitude_jitter = kv.get_double("amplitude_jitter", c.amplitude_jitter);
	c.visits_jitter = kv.get_double("visits_jitter", c.visits_jitter);
	c.lead_in_weeks = static_cast<int>(kv.get_int("lead_in_weeks", c.lead_in_weeks));
	c.include_national = kv.get_bool("include_national", c.include_national);
	c.wave_origin = kv.get("wave_origin");
	c.wave_speed = kv.get_double("wave_speed", c.wave_speed);
	kv.reject_unknown();
	c.check();
	return c;
}

} // namespace ilicast
