#pragma once

// Weekly ILI surveillance tables: parsing, validation, indexing, canonical
// serialization, the national series and the dataset audit.

#include "ilicast/csv.hpp"
#include "ilicast/epiweek.hpp"
#include "ilicast/errors.hpp"
#include "ilicast/geography.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace ilicast {

// Allowed gap between a reported percentage and 100*count/visits.
inline constexpr double kPercentRoundingTolerance = 0.05;

struct Observation {
	std::string location;
	Epiweek week;
	double ili_pct = 0;   // percent of visits
	long long ili_count = 0;
	long long total_visits = 0;
	long long providers = 0;

	friend bool operator==(const Observation &, const Observation &) = default;
};

// Empty string when the observation satisfies the row invariants, otherwise the reason.
inline std::string observation_problem(const Observation &o) {
	if (!(o.ili_pct >= 0)) {
		return "negative ili_pct";
	}
	if (o.ili_count < 0 || o.total_visits < 0 || o.providers < 0) {
		return "negative count";
	}
	if (o.ili_count > o.total_visits) {
		return "ili_count exceeds total_visits";
	}
	if (o.total_visits > 0) {
		const double implied = 100.0 * static_cast<double>(o.ili_count) / static_cast<double>(o.total_visits);
		if (std::abs(o.ili_pct - implied) > kPercentRoundingTolerance + 1e-9) {
			return "ili_pct inconsistent with ili_count/total_visits";
		}
	}
	return {};
}

enum class Field { Location, Year, Week, Epiweek, IliPct, IliCount, TotalVisits, Providers };

inline constexpr std::array<std::pair<Field, std::string_view>, 8> kFieldKeys = {{
    {Field::Location, "location"},
    {Field::Year, "year"},
    {Field::Week, "week"},
    {Field::Epiweek, "epiweek"},
    {Field::IliPct, "ili_pct"},
    {Field::IliCount, "ili_count"},
    {Field::TotalVisits, "total_visits"},
    {Field::Providers, "providers"},
}};

// Semantic field -> column name. The week is given either by year + week or
// by a single compact epiweek column (YYYYWW).
struct Schema {
	std::map<Field, std::string> columns;

	static Schema canonical() {
		Schema s;
		s.columns = {{Field::Location, "location"},    {Field::Year, "year"},
		             {Field::Week, "week"},            {Field::IliPct, "ili_pct"},
		             {Field::IliCount, "ili_count"},   {Field::TotalVisits, "total_visits"},
		             {Field::Providers, "providers"}};
		return s;
	}

	// Column names of the CDC FluView ILINet download.
	static Schema fluview() {
		Schema s;
		s.columns = {{Field::Location, "REGION"},          {Field::Year, "YEAR"},
		             {Field::Week, "WEEK"},                {Field::IliPct, "%UNWEIGHTED ILI"},
		             {Field::IliCount, "ILITOTAL"},        {Field::TotalVisits, "TOTAL PATIENTS"},
		             {Field::Providers, "NUM. OF PROVIDERS"}};
		return s;
	}

	// key = column lines; '#' starts a comment.
	static Schema parse(std::string_view text) {
		Schema s;
		std::istringstream in{std::string(text)};
		std::string line;
		int lineno = 0;
		while (std::getline(in, line)) {
			++lineno;
			auto t = csv::trim(line);
			if (t.empty() || t.front() == '#') {
				continue;
			}
			const auto eq = t.find('=');
			if (eq == std::string_view::npos) {
				throw SchemaError("schema line " + std::to_string(lineno) + ": expected key = column");
			}
			const auto key = csv::trim(t.substr(0, eq));
			const auto value = csv::trim(t.substr(eq + 1));
			auto it = std::find_if(kFieldKeys.begin(), kFieldKeys.end(), [&](auto &kv) { return kv.second == key; });
			if (it == kFieldKeys.end()) {
				throw SchemaError("schema line " + std::to_string(lineno) + ": unknown field '" + std::string(key) + "'");
			}
			s.columns[it->first] = std::string(value);
		}
		s.check();
		return s;
	}

	static Schema load(const std::string &path) {
		return parse(csv::read_file(path));
	}

	void check() const {
		for (Field f : {Field::Location, Field::IliPct, Field::IliCount, Field::TotalVisits, Field::Providers}) {
			if (!columns.contains(f)) {
				throw SchemaError("schema does not map required field '" + std::string(key_of(f)) + "'");
			}
		}
		const bool split = columns.contains(Field::Year) && columns.contains(Field::Week);
		if (!split && !columns.contains(Field::Epiweek)) {
			throw SchemaError("schema must map either year and week or epiweek");
		}
	}

	static std::string_view key_of(Field f) {
		for (const auto &[k, v] : kFieldKeys) {
			if (k == f) {
				return v;
			}
		}
		return "?";
	}
};

class ObservationTable {
public:
	ObservationTable() = default;

	// Sorts by (location, week) and indexes; duplicate keys are an integrity error.
	static ObservationTable build(std::vector<Observation> rows) {
		std::sort(rows.begin(), rows.end(), [](const Observation &a, const Observation &b) {
			return std::tie(a.location, a.week) < std::tie(b.location, b.week);
		});
		for (std::size_t i = 1; i < rows.size(); ++i) {
			if (rows[i].location == rows[i - 1].location && rows[i].week == rows[i - 1].week) {
				throw IntegrityError("duplicate observation for (" + rows[i].location + ", " +
				                     rows[i].week.to_string() + ")");
			}
		}
		ObservationTable t;
		t.rows_ = std::move(rows);
		t.reindex();
		return t;
	}

	std::span<const Observation> rows() const {
		return rows_;
	}
	std::size_t size() const {
		return rows_.size();
	}
	bool empty() const {
		return rows_.empty();
	}

	const Observation *find(std::string_view location, const Epiweek &week) const {
		auto it = panel_.find(std::string(location));
		if (it == panel_.end()) {
			return nullptr;
		}
		const long k = week.ordinal() - first_ordinal_;
		if (k < 0 || k >= static_cast<long>(it->second.size())) {
			return nullptr;
		}
		const int idx = it->second[static_cast<std::size_t>(k)];
		return idx < 0 ? nullptr : &rows_[static_cast<std::size_t>(idx)];
	}

	std::optional<double> pct(std::string_view location, const Epiweek &week) const {
		if (const auto *o = find(location, week)) {
			return o->ili_pct;
		}
		return std::nullopt;
	}

	// All locations, sorted; includes the national marker when present.
	const std::vector<std::string> &locations() const {
		return locations_;
	}

	std::vector<std::string> states() const {
		std::vector<std::string> out;
		for (const auto &l : locations_) {
			if (l != kNational) {
				out.push_back(l);
			}
		}
		return out;
	}

	bool has_national() const {
		return panel_.contains(std::string(kNational));
	}

	// Distinct weeks with at least one row, ascending.
	const std::vector<Epiweek> &weeks() const {
		return weeks_;
	}

	// In-season weeks keyed to their season label.
	std::map<Epiweek, std::string> season_labels() const {
		std::map<Epiweek, std::string> out;
		for (const auto &w : weeks_) {
			if (in_season(w)) {
				out.emplace(w, season_of(w).label());
			}
		}
		return out;
	}

	// Weeks inside [first, last] of the table's span where some location
	// present elsewhere in the table has no row.
	std::vector<Epiweek> incomplete_weeks() const {
		std::vector<Epiweek> out;
		if (rows_.empty()) {
			return out;
		}
		const long n = last_ordinal_ - first_ordinal_ + 1;
		for (long k = 0; k < n; ++k) {
			for (const auto &[loc, slots] : panel_) {
				if (slots[static_cast<std::size_t>(k)] < 0) {
					out.push_back(Epiweek::from_ordinal(first_ordinal_ + k));
					break;
				}
			}
		}
		return out;
	}

	friend bool operator==(const ObservationTable &a, const ObservationTable &b) {
		return a.rows_ == b.rows_;
	}

private:
	void reindex() {
		panel_.clear();
		locations_.clear();
		weeks_.clear();
		if (rows_.empty()) {
			return;
		}
		std::set<Epiweek> weeks;
		first_ordinal_ = rows_.front().week.ordinal();
		last_ordinal_ = first_ordinal_;
		for (const auto &r : rows_) {
			const long o = r.week.ordinal();
			first_ordinal_ = std::min(first_ordinal_, o);
			last_ordinal_ = std::max(last_ordinal_, o);
			weeks.insert(r.week);
		}
		const auto span = static_cast<std::size_t>(last_ordinal_ - first_ordinal_ + 1);
		for (std::size_t i = 0; i < rows_.size(); ++i) {
			auto [it, inserted] = panel_.try_emplace(rows_[i].location, span, -1);
			if (inserted) {
				locations_.push_back(rows_[i].location);
			}
			it->second[static_cast<std::size_t>(rows_[i].week.ordinal() - first_ordinal_)] = static_cast<int>(i);
		}
		std::sort(locations_.begin(), locations_.end());
		weeks_.assign(weeks.begin(), weeks.end());
	}

	std::vector<Observation> rows_;
	std::unordered_map<std::string, std::vector<int>> panel_;
	std::vector<std::string> locations_;
	std::vector<Epiweek> weeks_;
	long first_ordinal_ = 0;
	long last_ordinal_ = -1;
};

struct RejectedRow {
	std::size_t line = 0; // 1-based, header is line 1
	std::string reason;
	std::string raw;
};

struct IngestResult {
	ObservationTable table;
	std::vector<RejectedRow> rejects;
	std::size_t skipped_locations = 0; // territories, DC, sub-state jurisdictions
	std::size_t missing_values = 0;    // rows with an explicit missing marker, left out of the table
};

// FluView writes "X" for jurisdictions that did not report a week.
inline bool is_missing_marker(std::string_view v) {
	const auto t = csv::trim(v);
	return t.empty() || t == "X" || t == "NA" || t == "N/A";
}

inline IngestResult parse_ili_csv(std::istream &in, const Schema &schema) {
	schema.check();
	csv::Record header;
	if (!csv::read_record(in, header)) {
		throw SchemaError("empty input: header row required");
	}
	// Strip a UTF-8 byte-order mark.
	if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) {
		header[0].erase(0, 3);
	}
	std::size_t line = 1;
	// FluView downloads start with a one-line title above the header.
	const auto &loc_name = schema.columns.at(Field::Location);
	auto has_location = [&] {
		return std::any_of(header.begin(), header.end(), [&](const std::string &h) { return csv::trim(h) == loc_name; });
	};
	for (int skipped = 0; !has_location() && skipped < 2; ++skipped) {
		if (!csv::read_record(in, header)) {
			break;
		}
		++line;
	}
	std::map<Field, std::size_t> col;
	for (const auto &[field, name] : schema.columns) {
		auto it = std::find_if(header.begin(), header.end(), [&](const std::string &h) { return csv::trim(h) == name; });
		if (it == header.end()) {
			throw SchemaError("missing required column '" + name + "' (field " + std::string(Schema::key_of(field)) + ")");
		}
		col[field] = static_cast<std::size_t>(it - header.begin());
	}
	const bool split_week = col.contains(Field::Year) && col.contains(Field::Week);

	IngestResult result;
	std::vector<Observation> rows;
	csv::Record rec;
	while (csv::read_record(in, rec)) {
		++line;
		if (rec.size() == 1 && csv::trim(rec[0]).empty()) {
			continue;
		}
		auto raw = [&] {
			std::ostringstream s;
			csv::write_record(s, rec);
			auto str = s.str();
			str.pop_back();
			return str;
		};
		auto reject = [&](std::string reason) { result.rejects.push_back({line, std::move(reason), raw()}); };
		if (rec.size() < header.size()) {
			reject("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(rec.size()));
			continue;
		}
		Observation o;
		o.location = normalize_location(rec[col[Field::Location]]);
		if (o.location.empty()) {
			++result.skipped_locations;
			continue;
		}
		try {
			if (split_week) {
				auto y = csv::parse_int(rec[col[Field::Year]]);
				auto w = csv::parse_int(rec[col[Field::Week]]);
				if (!y || !w) {
					reject("unparseable year/week");
					continue;
				}
				o.week = Epiweek{static_cast<int>(*y), static_cast<int>(*w)};
			} else {
				o.week = Epiweek::parse(csv::trim(rec[col[Field::Epiweek]]));
			}
		} catch (const DomainError &e) {
			reject(e.what());
			continue;
		}
		if (is_missing_marker(rec[col[Field::IliPct]]) || is_missing_marker(rec[col[Field::IliCount]]) ||
		    is_missing_marker(rec[col[Field::TotalVisits]])) {
			++result.missing_values;
			continue;
		}
		auto pct = csv::parse_double(rec[col[Field::IliPct]]);
		auto cnt = csv::parse_int(rec[col[Field::IliCount]]);
		auto vis = csv::parse_int(rec[col[Field::TotalVisits]]);
		auto prov = csv::parse_int(rec[col[Field::Providers]]);
		if (!pct || !cnt || !vis || !prov) {
			reject("unparseable or missing numeric value");
			continue;
		}
		o.ili_pct = *pct;
		o.ili_count = *cnt;
		o.total_visits = *vis;
		o.providers = *prov;
		if (auto problem = observation_problem(o); !problem.empty()) {
			reject(problem);
			continue;
		}
		rows.push_back(std::move(o));
	}
	result.table = ObservationTable::build(std::move(rows));
	return result;
}

inline IngestResult parse_ili_csv(const std::string &path, const Schema &schema) {
	std::ifstream in(path, std::ios::binary);
	if (!in) {
		throw Error("cannot open data file " + path);
	}
	return parse_ili_csv(in, schema);
}

// Canonical form: fixed column order, rows sorted by (location, week).
inline void write_canonical_csv(const ObservationTable &table, std::ostream &out) {
	out << "location,year,week,ili_pct,ili_count,total_visits,providers\n";
	for (const auto &o : table.rows()) {
		out << o.location << ',' << o.week.year << ',' << o.week.week << ',' << csv::format_double(o.ili_pct) << ','
		    << o.ili_count << ',' << o.total_visits << ',' << o.providers << '\n';
	}
}

inline std::string canonical_csv(const ObservationTable &table) {
	std::ostringstream s;
	write_canonical_csv(table, s);
	return s.str();
}

struct NationalSeries {
	std::map<Epiweek, double> pct;
	bool synthesized = false;

	std::optional<double> at(const Epiweek &w) const {
		auto it = pct.find(w);
		if (it == pct.end()) {
			return std::nullopt;
		}
		return it->second;
	}
};

// National %ILI per week: the national rows verbatim when present, otherwise
// the visits-weighted mean 100*sum(C)/sum(V) over required_states, which must
// all report every week.
inline NationalSeries us_average_series(const ObservationTable &table, std::span<const std::string> required_states) {
	NationalSeries out;
	if (table.has_national()) {
		for (const auto &o : table.rows()) {
			if (o.location == kNational) {
				out.pct.emplace(o.week, o.ili_pct);
			}
		}
		return out;
	}
	if (required_states.empty()) {
		throw InsufficientDataError("no national rows and no states to aggregate");
	}
	out.synthesized = true;
	std::vector<std::string> missing;
	for (const auto &w : table.weeks()) {
		long double c = 0;
		long double v = 0;
		for (const auto &s : required_states) {
			const auto *o = table.find(s, w);
			if (!o) {
				missing.push_back(s + "@" + w.to_string());
				continue;
			}
			c += static_cast<long double>(o->ili_count);
			v += static_cast<long double>(o->total_visits);
		}
		if (v > 0) {
			out.pct.emplace(w, static_cast<double>(100.0L * c / v));
		}
	}
	if (!missing.empty()) {
		std::string msg = "no national rows and incomplete state coverage (" + std::to_string(missing.size()) +
		                  " missing state-weeks, first " + missing.front() + ")";
		throw InsufficientDataError(msg);
	}
	return out;
}

struct SeasonAudit {
	std::string season;
	bool training = false;
	std::size_t calendar_weeks = 0;           // in-season weeks in the MMWR calendar
	std::map<std::string, std::size_t> present; // per location: in-season weeks with a row
};

struct DatasetAudit {
	std::vector<SeasonAudit> seasons;
	// Per location totals over training and test seasons.
	std::map<std::string, std::size_t> train_weeks;
	std::map<std::string, std::size_t> test_weeks;
	std::size_t train_calendar_weeks = 0;
	std::size_t test_calendar_weeks = 0;
	std::vector<Epiweek> incomplete_weeks;
};

inline DatasetAudit audit_dataset(const ObservationTable &table, std::span<const Season> train,
                                  std::span<const Season> test) {
	DatasetAudit audit;
	auto visit = [&](const Season &s, bool training) {
		SeasonAudit sa;
		sa.season = s.label();
		sa.training = training;
		for (const auto &w : s.weeks()) {
			++sa.calendar_weeks;
			for (const auto &loc : table.locations()) {
				if (table.find(loc, w)) {
					++sa.present[loc];
				}
			}
		}
		for (const auto &loc : table.locations()) {
			auto n = sa.present.contains(loc) ? sa.present[loc] : 0;
			(training ? audit.train_weeks : audit.test_weeks)[loc] += n;
		}
		(training ? audit.train_calendar_weeks : audit.test_calendar_weeks) += sa.calendar_weeks;
		audit.seasons.push_back(std::move(sa));
	};
	for (const auto &s : train) {
		visit(s, true);
	}
	for (const auto &s : test) {
		visit(s, false);
	}
	audit.incomplete_weeks = table.incomplete_weeks();
	return audit;
}

} // namespace ilicast
