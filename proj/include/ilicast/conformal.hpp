#pragma once

// Online quantile tracking of absolute residuals.
//
// The radius moves up by eta * level after a miss and down by
// eta * (1 - level) after a cover, so over a long stream the miss rate is
// driven to 1 - level.

#include "ilicast/errors.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

namespace ilicast {

inline constexpr double kLevels[3] = {0.50, 0.80, 0.95};

// Empirical quantile with averaging at discontinuities: for n*level integer
// the midpoint of the two order statistics around it, otherwise the next
// order statistic up.
inline double empirical_quantile(std::span<const double> values, double level) {
	if (values.empty()) {
		throw Error("empirical quantile of an empty sample");
	}
	std::vector<double> v(values.begin(), values.end());
	std::sort(v.begin(), v.end());
	const double np = static_cast<double>(v.size()) * level;
	const auto n = v.size();
	const auto at = [&](double k) { // 1-based, clamped
		const auto idx = static_cast<std::size_t>(std::clamp(k, 1.0, static_cast<double>(n)));
		return v[idx - 1];
	};
	const double nearest = std::round(np);
	if (std::abs(np - nearest) < 1e-9) {
		return 0.5 * (at(nearest) + at(nearest + 1));
	}
	return at(std::floor(np) + 1);
}

struct TrackerState {
	double level = 0.8;
	double radius = 0;
	double learning_rate = 0;
	long history = 0;
};

inline TrackerState init_tracker(std::span<const double> residuals, double level, double learning_rate) {
	if (residuals.empty()) {
		throw Error("tracker warm start needs at least one residual");
	}
	if (!(level > 0 && level < 1)) {
		throw Error("tracker level must lie in (0, 1)");
	}
	std::vector<double> abs_res;
	abs_res.reserve(residuals.size());
	for (double r : residuals) {
		abs_res.push_back(std::abs(r));
	}
	TrackerState s;
	s.level = level;
	s.radius = empirical_quantile(abs_res, level);
	s.learning_rate = learning_rate;
	return s;
}

inline TrackerState update(TrackerState s, double score) {
	const double miss = score > s.radius ? 1.0 : 0.0;
	s.radius = std::max(0.0, s.radius + s.learning_rate * (miss - (1.0 - s.level)));
	++s.history;
	return s;
}

// Symmetric interval around the point; %ILI cannot go below zero.
inline std::pair<double, double> interval(const TrackerState &s, double point) {
	return {std::max(0.0, point - s.radius), point + s.radius};
}

} // namespace ilicast
