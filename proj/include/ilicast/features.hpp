#pragma once

// Design matrices for the autoregressive model classes.
//
// At forecast origin t the covariates use weeks t, t-1 and t-2 only:
//   self lags        I[target, t-k], k = 0, 1, 2
//   neighbor trends  D(I[s, t-k-1], I[s, t-k]), k = 0, 1, for s in S(target)
//   national trends  the same indicators on the national series
//   intercept
// The Poisson class takes log(I + c) self lags and log-scale trends, carries
// log(c + V[target, t+2]) as a fixed offset and log(c + P[target, t+2]) as a
// regressor. Outcomes are %ILI (linear, quantile) or ILI counts (Poisson) at
// t+2.

#include "ilicast/epiweek.hpp"
#include "ilicast/errors.hpp"
#include "ilicast/geography.hpp"
#include "ilicast/ingest.hpp"
#include "ilicast/model_spec.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace ilicast {

inline constexpr double kDefaultTrendTolerance = 0.05;
inline constexpr int kHorizon = 2;

// Differences within this slack of the tolerance count as flat, so decimal
// inputs such as (1.00, 1.05) land on the boundary they were written as.
inline constexpr double kTrendBoundarySlack = 1e-9;

enum class Trend : int { Down = -1, Flat = 0, Up = 1 };

inline Trend trend_indicator(double prev, double curr, double eps) {
	const double d = curr - prev;
	if (d > eps + kTrendBoundarySlack) {
		return Trend::Up;
	}
	if (d < -eps - kTrendBoundarySlack) {
		return Trend::Down;
	}
	return Trend::Flat;
}

// Same rule on log(value + c); the shift admits zero %ILI.
inline Trend log_trend_indicator(double prev, double curr, double eps, double c) {
	return trend_indicator(std::log(prev + c), std::log(curr + c), eps);
}

// Half the smallest positive state %ILI over the in-season weeks of the
// training seasons.
inline double compute_small_constant(const ObservationTable &table, std::span<const std::string> states,
                                     std::span<const Season> train) {
	double lo = std::numeric_limits<double>::infinity();
	for (const auto &season : train) {
		for (const auto &w : season.weeks()) {
			for (const auto &s : states) {
				if (auto v = table.pct(s, w); v && *v > 0) {
					lo = std::min(lo, *v);
				}
			}
		}
	}
	if (!std::isfinite(lo)) {
		throw InsufficientDataError("no positive %ILI in the training span; cannot derive the small constant");
	}
	return 0.5 * lo;
}

// Column layout of a design row. The name list is a pure function of
// (class, variant, neighbor count, intercept) and can be parsed back.
struct ColumnLayout {
	ModelClass cls = ModelClass::Linear;
	Variant variant = Variant::Isolated;
	int neighbor_count = 0;
	bool intercept = true;

	std::vector<std::string> names() const {
		std::vector<std::string> out;
		const bool poisson = cls == ModelClass::Poisson;
		if (poisson) {
			out.emplace_back("log_providers");
		}
		const std::string lag = variant == Variant::GeoPooled ? (poisson ? "pooled_log_lag" : "pooled_lag")
		                                                      : (poisson ? "log_self_lag" : "self_lag");
		for (int k = 0; k <= 2; ++k) {
			out.push_back(lag + std::to_string(k));
		}
		const std::string trend = poisson ? "logtrend" : "trend";
		for (int i = 1; i <= neighbor_count; ++i) {
			for (int k = 0; k <= 1; ++k) {
				out.push_back("nbr" + std::to_string(i) + "_" + trend + std::to_string(k));
			}
		}
		if (uses_us(variant)) {
			for (int k = 0; k <= 1; ++k) {
				out.push_back("us_" + trend + std::to_string(k));
			}
		}
		if (intercept) {
			out.emplace_back("intercept");
		}
		return out;
	}

	int width() const {
		return static_cast<int>(names().size());
	}

	void check() const {
		if (cls == ModelClass::Lvcf || variant == Variant::Baseline) {
			throw ContractError("lvcf has no design layout");
		}
		if (uses_neighbors(variant) ? neighbor_count < 1 : neighbor_count != 0) {
			throw ContractError("neighbor count " + std::to_string(neighbor_count) + " invalid for variant " +
			                    std::string(to_string(variant)));
		}
	}

	// Inverse of names(); throws when the list is not a valid layout.
	static ColumnLayout from_names(ModelClass cls, std::span<const std::string> names) {
		const bool poisson = cls == ModelClass::Poisson;
		const std::size_t lag_at = poisson ? 1 : 0;
		if (names.size() < lag_at + 3) {
			throw ContractError("column list too short for a layout");
		}
		ColumnLayout l;
		l.cls = cls;
		const bool pooled = names[lag_at].rfind("pooled_", 0) == 0;
		std::size_t nbr_cols = 0;
		bool us = false;
		for (const auto &n : names) {
			if (n.rfind("nbr", 0) == 0) {
				++nbr_cols;
			} else if (n.rfind("us_", 0) == 0) {
				us = true;
			}
		}
		l.neighbor_count = static_cast<int>(nbr_cols / 2);
		l.intercept = names.back() == "intercept";
		if (pooled) {
			l.variant = Variant::GeoPooled;
		} else if (l.neighbor_count > 0) {
			l.variant = us ? Variant::NeighborsUs : Variant::Neighbors;
		} else {
			l.variant = us ? Variant::IsolatedUs : Variant::Isolated;
		}
		const auto expected = l.names();
		if (!std::equal(names.begin(), names.end(), expected.begin(), expected.end())) {
			throw ContractError("column list is not a valid layout");
		}
		return l;
	}

	friend bool operator==(const ColumnLayout &, const ColumnLayout &) = default;
};

struct DesignRow {
	ColumnLayout layout;
	std::string target;
	Epiweek fit_time;      // forecast origin t
	Epiweek outcome_time;  // t + 2
	std::optional<double> outcome; // %ILI, or ILI count for Poisson
	std::optional<double> outcome_pct; // %ILI at t+2 for every class
	std::vector<double> x;
	double offset = 0;     // log(c + V[t+2]) for Poisson, else 0
	double visits = 0;     // V[t+2]; converts Poisson counts to %ILI
};

struct DesignMatrix {
	ColumnLayout layout;
	Eigen::MatrixXd X;
	Eigen::VectorXd y;
	Eigen::VectorXd offset;
	Eigen::VectorXd visits;
	Eigen::VectorXd outcome_pct;
	std::vector<std::string> targets;
	std::vector<Epiweek> fit_times;
	std::vector<Epiweek> outcome_times;
	std::size_t excluded_rows = 0; // rows dropped for missing inputs

	Eigen::Index rows() const {
		return X.rows();
	}
	Eigen::Index cols() const {
		return X.cols();
	}
};

// Everything feature construction needs, frozen for a run.
struct FeatureContext {
	const ObservationTable *table = nullptr;
	AdjacencyGraph graph;          // restricted to `states`
	NationalSeries national;
	std::vector<std::string> states;
	std::vector<Epiweek> outcome_weeks; // admissible outcome weeks, ascending
	double eps = kDefaultTrendTolerance;
	double c = 0;                  // small constant
	bool strict_paper_mode = false;

	ColumnLayout layout_for(const ModelSpec &spec, const std::string &target) const {
		ColumnLayout l;
		l.cls = spec.cls;
		l.variant = spec.variant;
		l.neighbor_count = uses_neighbors(spec.variant) ? static_cast<int>(graph.neighbors(target).size()) : 0;
		l.intercept = !(strict_paper_mode && spec.variant == Variant::Isolated);
		return l;
	}
};

// Reason is non-empty when the row cannot be built.
struct RowResult {
	std::optional<DesignRow> row;
	std::string reason;
};

namespace detail {

inline RowResult make_row(const FeatureContext &ctx, const ColumnLayout &layout, const std::string &target,
                          const Epiweek &t, bool with_outcome) {
	RowResult res;
	const auto &tab = *ctx.table;
	const bool poisson = layout.cls == ModelClass::Poisson;
	auto fail = [&](const std::string &what, const std::string &loc, const Epiweek &w) {
		res.reason = "missing " + what + " for " + loc + " at " + w.to_string();
		return res;
	};

	const Epiweek tm1 = t.prev();
	const Epiweek tm2 = tm1.prev();
	const Epiweek out_w = t.plus(kHorizon);
	const Epiweek lag_weeks[3] = {t, tm1, tm2};

	DesignRow row;
	row.layout = layout;
	row.target = target;
	row.fit_time = t;
	row.outcome_time = out_w;
	row.x.reserve(static_cast<std::size_t>(layout.width()));

	const Observation *at_outcome = tab.find(target, out_w);
	if (poisson) {
		// Offsets use the finalized visits and providers at t+2.
		if (!at_outcome) {
			return fail("visits/providers", target, out_w);
		}
		row.offset = std::log(ctx.c + static_cast<double>(at_outcome->total_visits));
		row.visits = static_cast<double>(at_outcome->total_visits);
		row.x.push_back(std::log(ctx.c + static_cast<double>(at_outcome->providers)));
	} else if (at_outcome) {
		row.visits = static_cast<double>(at_outcome->total_visits);
	}

	for (int k = 0; k < 3; ++k) {
		auto v = tab.pct(target, lag_weeks[k]);
		if (!v) {
			return fail("%ILI", target, lag_weeks[k]);
		}
		row.x.push_back(poisson ? std::log(*v + ctx.c) : *v);
	}

	auto push_trends = [&](double v0, double v1, double v2) {
		// v0 = value at t, v1 at t-1, v2 at t-2
		if (poisson) {
			row.x.push_back(static_cast<double>(log_trend_indicator(v1, v0, ctx.eps, ctx.c)));
			row.x.push_back(static_cast<double>(log_trend_indicator(v2, v1, ctx.eps, ctx.c)));
		} else {
			row.x.push_back(static_cast<double>(trend_indicator(v1, v0, ctx.eps)));
			row.x.push_back(static_cast<double>(trend_indicator(v2, v1, ctx.eps)));
		}
	};

	if (uses_neighbors(layout.variant)) {
		const auto nbrs = ctx.graph.neighbors(target);
		if (static_cast<int>(nbrs.size()) != layout.neighbor_count) {
			throw ContractError("layout neighbor count does not match graph for " + target);
		}
		for (const auto &s : nbrs) {
			double v[3];
			for (int k = 0; k < 3; ++k) {
				auto p = tab.pct(s, lag_weeks[k]);
				if (!p) {
					return fail("neighbor %ILI", s, lag_weeks[k]);
				}
				v[k] = *p;
			}
			push_trends(v[0], v[1], v[2]);
		}
	}
	if (uses_us(layout.variant)) {
		double v[3];
		for (int k = 0; k < 3; ++k) {
			auto p = ctx.national.at(lag_weeks[k]);
			if (!p) {
				return fail("national %ILI", std::string(kNational), lag_weeks[k]);
			}
			v[k] = *p;
		}
		push_trends(v[0], v[1], v[2]);
	}
	if (layout.intercept) {
		row.x.push_back(1.0);
	}

	if (with_outcome) {
		if (!at_outcome) {
			return fail("outcome", target, out_w);
		}
		row.outcome = poisson ? static_cast<double>(at_outcome->ili_count) : at_outcome->ili_pct;
		row.outcome_pct = at_outcome->ili_pct;
	}
	res.row = std::move(row);
	return res;
}

} // namespace detail

// Training rows for a model whose forecast origin is t: one row per
// admissible outcome week u <= t (fit time u - 2), skipping rows with missing
// inputs. Geo-pooled stacks rows over every state in the context, ordered by
// outcome week then state.
inline DesignMatrix build_training_matrix(const ModelSpec &spec, const std::string &target, const FeatureContext &ctx,
                                          const Epiweek &t) {
	spec.check();
	const bool pooled = spec.variant == Variant::GeoPooled;
	const ColumnLayout layout = ctx.layout_for(spec, pooled ? ctx.states.front() : target);
	layout.check();

	std::vector<DesignRow> rows;
	std::size_t excluded = 0;
	for (const auto &u : ctx.outcome_weeks) {
		if (u > t) {
			break;
		}
		const Epiweek fit_time = u.plus(-kHorizon);
		auto add = [&](const std::string &s) {
			auto r = detail::make_row(ctx, layout, s, fit_time, true);
			if (r.row) {
				rows.push_back(std::move(*r.row));
			} else {
				++excluded;
			}
		};
		if (pooled) {
			for (const auto &s : ctx.states) {
				add(s);
			}
		} else {
			add(target);
		}
	}

	DesignMatrix m;
	m.layout = layout;
	m.excluded_rows = excluded;
	const auto n = static_cast<Eigen::Index>(rows.size());
	const auto p = static_cast<Eigen::Index>(layout.width());
	m.X.resize(n, p);
	m.y.resize(n);
	m.offset.resize(n);
	m.visits.resize(n);
	m.outcome_pct.resize(n);
	for (Eigen::Index i = 0; i < n; ++i) {
		const auto &r = rows[static_cast<std::size_t>(i)];
		for (Eigen::Index j = 0; j < p; ++j) {
			m.X(i, j) = r.x[static_cast<std::size_t>(j)];
		}
		m.y(i) = *r.outcome;
		m.offset(i) = r.offset;
		m.visits(i) = r.visits;
		m.outcome_pct(i) = *r.outcome_pct;
		m.targets.push_back(r.target);
		m.fit_times.push_back(r.fit_time);
		m.outcome_times.push_back(r.outcome_time);
	}
	return m;
}

// Covariate row at origin t with no outcome attached.
inline RowResult build_prediction_row(const ModelSpec &spec, const std::string &target, const FeatureContext &ctx,
                                      const Epiweek &t) {
	spec.check();
	const ColumnLayout layout = ctx.layout_for(spec, target);
	if (uses_neighbors(spec.variant) && layout.neighbor_count == 0) {
		return {std::nullopt, "no neighbors of " + target + " in this run"};
	}
	layout.check();
	return detail::make_row(ctx, layout, target, t, false);
}

// Debug dump: one header row of column names, then target, fit/outcome weeks,
// outcome, offset and the covariates.
inline void write_design_csv(const DesignMatrix &m, std::ostream &out) {
	out << "target,fit_time,outcome_time,outcome,offset";
	for (const auto &n : m.layout.names()) {
		out << ',' << n;
	}
	out << '\n';
	for (Eigen::Index i = 0; i < m.rows(); ++i) {
		const auto k = static_cast<std::size_t>(i);
		out << m.targets[k] << ',' << m.fit_times[k].to_string() << ',' << m.outcome_times[k].to_string() << ','
		    << csv::format_double(m.y(i)) << ',' << csv::format_double(m.offset(i));
		for (Eigen::Index j = 0; j < m.cols(); ++j) {
			out << ',' << csv::format_double(m.X(i, j));
		}
		out << '\n';
	}
}

} // namespace ilicast
