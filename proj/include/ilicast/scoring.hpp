#pragma once

// Interval scores, weighted interval score and rMSE, with aggregation by
// state and by week and differences against a baseline model.

#include "ilicast/csv.hpp"
#include "ilicast/epiweek.hpp"
#include "ilicast/errors.hpp"
#include "ilicast/model_spec.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace ilicast {

struct PredictionInterval {
	double level = 0;   // nominal coverage
	double lower = 0;
	double upper = 0;
};

struct ForecastRecord {
	ModelSpec spec;
	std::string state;
	Epiweek week;                 // target week
	double point = 0;
	double median = 0;            // m in the WIS
	std::vector<PredictionInterval> intervals;
	std::optional<double> truth;
};

// Width plus 2/alpha times the distance by which the truth falls outside.
inline double interval_score(double lower, double upper, double truth, double alpha) {
	double s = upper - lower;
	if (truth < lower) {
		s += 2.0 / alpha * (lower - truth);
	}
	if (truth > upper) {
		s += 2.0 / alpha * (truth - upper);
	}
	return s;
}

inline constexpr double kWisLevels[3] = {0.50, 0.80, 0.95};

// WIS = (0.5 |y - m| + sum_k (alpha_k / 2) IS_alpha_k) / (K + 1/2), with the
// 50/80/95% intervals at miscoverage alpha_k = 1 - level.
inline double wis(const ForecastRecord &r) {
	if (!r.truth) {
		throw ContractError("wis needs the realized value");
	}
	const double y = *r.truth;
	double total = 0.5 * std::abs(y - r.median);
	for (double level : kWisLevels) {
		auto it = std::find_if(r.intervals.begin(), r.intervals.end(),
		                       [&](const PredictionInterval &iv) { return std::abs(iv.level - level) < 1e-12; });
		if (it == r.intervals.end()) {
			throw ContractError("forecast lacks the " + csv::format_double(level) + " interval");
		}
		if (it->lower > it->upper) {
			throw ContractError("interval lower bound above upper bound");
		}
		const double alpha = 1.0 - level;
		total += alpha / 2.0 * interval_score(it->lower, it->upper, y, alpha);
	}
	if (r.intervals.size() != std::size(kWisLevels)) {
		throw ContractError("forecast must carry exactly the 50/80/95% intervals");
	}
	return total / (static_cast<double>(std::size(kWisLevels)) + 0.5);
}

struct ScoreRecord {
	ForecastRecord forecast;
	std::string season;
	double sq_error = 0;
	double wis = 0;
};

inline ScoreRecord score_forecast(const ForecastRecord &f) {
	ScoreRecord s;
	s.forecast = f;
	s.season = in_season(f.week) ? season_of(f.week).label() : "";
	const double e = f.point - f.truth.value();
	s.sq_error = e * e;
	s.wis = wis(f);
	return s;
}

struct UnavailableCell {
	ModelSpec spec;
	std::string state;
	Epiweek week;
	std::string reason;
};

// Mean over the available records of a cell; `count` records contributed and
// `unavailable` forecasts were excluded.
struct CellValue {
	double value = 0;
	std::size_t count = 0;
	std::size_t unavailable = 0;
};

class ScoreTable {
public:
	ScoreTable() = default;

	ScoreTable(std::vector<ScoreRecord> records, std::vector<UnavailableCell> unavailable = {})
	    : records_(std::move(records)), unavailable_(std::move(unavailable)) {
		std::sort(records_.begin(), records_.end(), [](const ScoreRecord &a, const ScoreRecord &b) {
			return key(a) < key(b);
		});
		std::sort(unavailable_.begin(), unavailable_.end(), [](const UnavailableCell &a, const UnavailableCell &b) {
			return std::tie(a.spec, a.state, a.week) < std::tie(b.spec, b.state, b.week);
		});
	}

	std::span<const ScoreRecord> records() const {
		return records_;
	}
	std::span<const UnavailableCell> unavailable() const {
		return unavailable_;
	}

	std::vector<ModelSpec> specs() const {
		std::set<ModelSpec> s;
		for (const auto &r : records_) {
			s.insert(r.forecast.spec);
		}
		for (const auto &u : unavailable_) {
			s.insert(u.spec);
		}
		return {s.begin(), s.end()};
	}

	std::optional<CellValue> rmse_by_state(const ModelSpec &spec, const std::string &state) const {
		auto c = mean_of(spec, [&](const ScoreRecord &r) { return r.forecast.state == state; },
		                 [&](const UnavailableCell &u) { return u.state == state; }, &ScoreRecord::sq_error);
		if (c) {
			c->value = std::sqrt(c->value);
		}
		return c;
	}

	std::optional<CellValue> rmse_by_week(const ModelSpec &spec, const Epiweek &week) const {
		auto c = mean_of(spec, [&](const ScoreRecord &r) { return r.forecast.week == week; },
		                 [&](const UnavailableCell &u) { return u.week == week; }, &ScoreRecord::sq_error);
		if (c) {
			c->value = std::sqrt(c->value);
		}
		return c;
	}

	std::optional<CellValue> wis_by_state(const ModelSpec &spec, const std::string &state) const {
		return mean_of(spec, [&](const ScoreRecord &r) { return r.forecast.state == state; },
		               [&](const UnavailableCell &u) { return u.state == state; }, &ScoreRecord::wis);
	}

	std::optional<CellValue> wis_by_week(const ModelSpec &spec, const Epiweek &week) const {
		return mean_of(spec, [&](const ScoreRecord &r) { return r.forecast.week == week; },
		               [&](const UnavailableCell &u) { return u.week == week; }, &ScoreRecord::wis);
	}

	std::vector<std::string> states(const ModelSpec &spec) const {
		std::set<std::string> s;
		for (const auto &r : spec_records(spec)) {
			s.insert(r.forecast.state);
		}
		return {s.begin(), s.end()};
	}

	std::vector<Epiweek> weeks(const ModelSpec &spec) const {
		std::set<Epiweek> s;
		for (const auto &r : spec_records(spec)) {
			s.insert(r.forecast.week);
		}
		return {s.begin(), s.end()};
	}

	// (state, week) cells with a scored record.
	std::set<std::pair<std::string, Epiweek>> cells(const ModelSpec &spec) const {
		std::set<std::pair<std::string, Epiweek>> out;
		for (const auto &r : spec_records(spec)) {
			out.emplace(r.forecast.state, r.forecast.week);
		}
		return out;
	}

	// Records of one model, contiguous because records are kept sorted.
	std::span<const ScoreRecord> spec_records(const ModelSpec &spec) const {
		auto lo = std::lower_bound(records_.begin(), records_.end(), spec,
		                           [](const ScoreRecord &r, const ModelSpec &s) { return r.forecast.spec < s; });
		auto hi = std::upper_bound(lo, records_.end(), spec,
		                           [](const ModelSpec &s, const ScoreRecord &r) { return s < r.forecast.spec; });
		return {lo, hi};
	}

private:
	static std::tuple<const ModelSpec &, const std::string &, const Epiweek &> key(const ScoreRecord &r) {
		return std::tie(r.forecast.spec, r.forecast.state, r.forecast.week);
	}

	template <class RecPred, class UnavPred>
	std::optional<CellValue> mean_of(const ModelSpec &spec, RecPred in_cell, UnavPred unav_in_cell,
	                                 double ScoreRecord::*field) const {
		CellValue c;
		double sum = 0;
		for (const auto &r : spec_records(spec)) {
			if (in_cell(r)) {
				sum += r.*field;
				++c.count;
			}
		}
		for (const auto &u : unavailable_) {
			if (u.spec == spec && unav_in_cell(u)) {
				++c.unavailable;
			}
		}
		if (c.count == 0) {
			return std::nullopt;
		}
		c.value = sum / static_cast<double>(c.count);
		return c;
	}

	std::vector<ScoreRecord> records_;
	std::vector<UnavailableCell> unavailable_;
};

struct DiffRow {
	std::string key;   // state code or epiweek
	double rmse = 0;   // spec minus baseline; negative is an improvement
	double wis = 0;
};

struct DiffTable {
	ModelSpec spec;
	ModelSpec baseline;
	std::vector<DiffRow> by_state;
	std::vector<DiffRow> by_week;
};

// Both specs must be scored on the same (state, week) cells.
inline DiffTable diff_vs_baseline(const ScoreTable &scores, const ModelSpec &spec, const ModelSpec &baseline) {
	const auto a = scores.cells(spec);
	const auto b = scores.cells(baseline);
	if (a != b) {
		std::vector<std::string> missing;
		for (const auto &c : a) {
			if (!b.contains(c)) {
				missing.push_back(baseline.name() + ":" + c.first + "@" + c.second.to_string());
			}
		}
		for (const auto &c : b) {
			if (!a.contains(c)) {
				missing.push_back(spec.name() + ":" + c.first + "@" + c.second.to_string());
			}
		}
		std::string msg = "cannot difference " + spec.name() + " against " + baseline.name() + "; missing cells:";
		for (std::size_t i = 0; i < missing.size() && i < 20; ++i) {
			msg += " " + missing[i];
		}
		if (missing.size() > 20) {
			msg += " ... (" + std::to_string(missing.size()) + " total)";
		}
		throw ContractError(msg);
	}
	DiffTable d;
	d.spec = spec;
	d.baseline = baseline;
	for (const auto &s : scores.states(spec)) {
		d.by_state.push_back({s, scores.rmse_by_state(spec, s)->value - scores.rmse_by_state(baseline, s)->value,
		                      scores.wis_by_state(spec, s)->value - scores.wis_by_state(baseline, s)->value});
	}
	for (const auto &w : scores.weeks(spec)) {
		d.by_week.push_back({w.to_string(),
		                     scores.rmse_by_week(spec, w)->value - scores.rmse_by_week(baseline, w)->value,
		                     scores.wis_by_week(spec, w)->value - scores.wis_by_week(baseline, w)->value});
	}
	return d;
}

inline const PredictionInterval *find_interval(const ForecastRecord &f, double level) {
	for (const auto &iv : f.intervals) {
		if (std::abs(iv.level - level) < 1e-12) {
			return &iv;
		}
	}
	return nullptr;
}

inline constexpr std::string_view kScoresHeader = "class,variant,state,week,season,point,median,lower_50,upper_50,"
                                                  "lower_80,upper_80,lower_95,upper_95,truth,sq_error,wis";

inline void write_scores_csv(const ScoreTable &t, std::ostream &out) {
	out << kScoresHeader << '\n';
	for (const auto &r : t.records()) {
		const auto &f = r.forecast;
		out << to_string(f.spec.cls) << ',' << to_string(f.spec.variant) << ',' << f.state << ',' << f.week.to_string()
		    << ',' << r.season << ',' << csv::format_double(f.point) << ',' << csv::format_double(f.median);
		for (double level : kWisLevels) {
			const auto *iv = find_interval(f, level);
			out << ',' << csv::format_double(iv->lower) << ',' << csv::format_double(iv->upper);
		}
		out << ',' << csv::format_double(*f.truth) << ',' << csv::format_double(r.sq_error) << ','
		    << csv::format_double(r.wis) << '\n';
	}
}

// Reads the per-record score file back; aggregates recomputed from it match
// the in-memory table exactly because doubles are written in round-trip form.
inline ScoreTable read_scores_csv(std::istream &in) {
	csv::Record rec;
	if (!csv::read_record(in, rec)) {
		throw SchemaError("empty score file");
	}
	std::vector<ScoreRecord> records;
	auto num = [](const std::string &s) {
		auto v = csv::parse_double(s);
		if (!v) {
			throw SchemaError("bad number '" + s + "' in score file");
		}
		return *v;
	};
	while (csv::read_record(in, rec)) {
		if (rec.size() == 1 && rec[0].empty()) {
			continue;
		}
		if (rec.size() != 16) {
			throw SchemaError("score row has " + std::to_string(rec.size()) + " fields, expected 16");
		}
		ScoreRecord r;
		r.forecast.spec = {parse_model_class(rec[0]), parse_variant(rec[1])};
		r.forecast.state = rec[2];
		r.forecast.week = Epiweek::parse(rec[3]);
		r.season = rec[4];
		r.forecast.point = num(rec[5]);
		r.forecast.median = num(rec[6]);
		for (std::size_t k = 0; k < 3; ++k) {
			r.forecast.intervals.push_back({kWisLevels[k], num(rec[7 + 2 * k]), num(rec[8 + 2 * k])});
		}
		r.forecast.truth = num(rec[13]);
		r.sq_error = num(rec[14]);
		r.wis = num(rec[15]);
		records.push_back(std::move(r));
	}
	return ScoreTable(std::move(records));
}

// Aggregate files: one row per (model, state) or (model, week).
inline void write_aggregates_by_state(const ScoreTable &t, std::ostream &out) {
	out << "class,variant,state,rmse,wis,n,unavailable\n";
	for (const auto &spec : t.specs()) {
		for (const auto &s : t.states(spec)) {
			const auto r = t.rmse_by_state(spec, s);
			const auto w = t.wis_by_state(spec, s);
			out << to_string(spec.cls) << ',' << to_string(spec.variant) << ',' << s << ','
			    << csv::format_double(r->value) << ',' << csv::format_double(w->value) << ',' << r->count << ','
			    << r->unavailable << '\n';
		}
	}
}

inline void write_aggregates_by_week(const ScoreTable &t, std::ostream &out) {
	out << "class,variant,week,season,rmse,wis,n,unavailable\n";
	for (const auto &spec : t.specs()) {
		for (const auto &w : t.weeks(spec)) {
			const auto r = t.rmse_by_week(spec, w);
			const auto v = t.wis_by_week(spec, w);
			out << to_string(spec.cls) << ',' << to_string(spec.variant) << ',' << w.to_string() << ','
			    << season_of(w).label() << ',' << csv::format_double(r->value) << ',' << csv::format_double(v->value)
			    << ',' << r->count << ',' << r->unavailable << '\n';
		}
	}
}

} // namespace ilicast
