#pragma once

// State codes and the covariate adjacency graph S(target).

#include "ilicast/csv.hpp"
#include "ilicast/errors.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ilicast {

inline constexpr std::string_view kNational = "US";

inline constexpr std::array<std::string_view, 50> kStateCodes = {
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DE", "FL", "GA", "HI", "IA", "ID", "IL", "IN", "KS", "KY",
    "LA", "MA", "MD", "ME", "MI", "MN", "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY",
    "OH", "OK", "OR", "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA", "WI", "WV", "WY"};

inline constexpr std::array<std::pair<std::string_view, std::string_view>, 50> kStateNames = {{
    {"ALABAMA", "AL"},       {"ALASKA", "AK"},        {"ARIZONA", "AZ"},       {"ARKANSAS", "AR"},
    {"CALIFORNIA", "CA"},    {"COLORADO", "CO"},      {"CONNECTICUT", "CT"},   {"DELAWARE", "DE"},
    {"FLORIDA", "FL"},       {"GEORGIA", "GA"},       {"HAWAII", "HI"},        {"IDAHO", "ID"},
    {"ILLINOIS", "IL"},      {"INDIANA", "IN"},       {"IOWA", "IA"},          {"KANSAS", "KS"},
    {"KENTUCKY", "KY"},      {"LOUISIANA", "LA"},     {"MAINE", "ME"},         {"MARYLAND", "MD"},
    {"MASSACHUSETTS", "MA"}, {"MICHIGAN", "MI"},      {"MINNESOTA", "MN"},     {"MISSISSIPPI", "MS"},
    {"MISSOURI", "MO"},      {"MONTANA", "MT"},       {"NEBRASKA", "NE"},      {"NEVADA", "NV"},
    {"NEW HAMPSHIRE", "NH"}, {"NEW JERSEY", "NJ"},    {"NEW MEXICO", "NM"},    {"NEW YORK", "NY"},
    {"NORTH CAROLINA", "NC"}, {"NORTH DAKOTA", "ND"}, {"OHIO", "OH"},          {"OKLAHOMA", "OK"},
    {"OREGON", "OR"},        {"PENNSYLVANIA", "PA"},  {"RHODE ISLAND", "RI"},  {"SOUTH CAROLINA", "SC"},
    {"SOUTH DAKOTA", "SD"},  {"TENNESSEE", "TN"},     {"TEXAS", "TX"},         {"UTAH", "UT"},
    {"VERMONT", "VT"},       {"VIRGINIA", "VA"},      {"WASHINGTON", "WA"},    {"WEST VIRGINIA", "WV"},
    {"WISCONSIN", "WI"},     {"WYOMING", "WY"},
}};

inline bool is_state_code(std::string_view code) {
	return std::binary_search(kStateCodes.begin(), kStateCodes.end(), code);
}

inline std::vector<std::string> all_states() {
	return {kStateCodes.begin(), kStateCodes.end()};
}

// Maps a location label as found in surveillance exports ("ga", "Georgia",
// "nat", "National") to a state code or the national marker. Returns an empty
// string for locations outside the 50 states (territories, DC, sub-state
// jurisdictions).
inline std::string normalize_location(std::string_view raw) {
	std::string up;
	for (char c : csv::trim(raw)) {
		up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
	}
	if (up == "US" || up == "NAT" || up == "NATIONAL" || up == "X") {
		return std::string(kNational);
	}
	if (is_state_code(up)) {
		return up;
	}
	for (const auto &[name, code] : kStateNames) {
		if (up == name) {
			return std::string(code);
		}
	}
	return {};
}

class AdjacencyGraph {
public:
	AdjacencyGraph() = default;

	// Edges are (target, covariate neighbor). With symmetrize, every edge is
	// mirrored, which adds AK/HI as covariates of WA/CA/OR.
	static AdjacencyGraph from_edges(std::span<const std::pair<std::string, std::string>> edges,
	                                 bool symmetrize = false) {
		AdjacencyGraph g;
		for (const auto &[a, b] : edges) {
			if (!is_state_code(a) || !is_state_code(b)) {
				throw DomainError("adjacency edge " + a + "->" + b + " uses a non-state code");
			}
			if (a == b) {
				throw IntegrityError("adjacency self-loop at " + a);
			}
			g.edges_[a].insert(b);
			if (symmetrize) {
				g.edges_[b].insert(a);
			}
		}
		return g;
	}

	// CSV with header "target,neighbor"; lines starting with '#' are comments.
	static AdjacencyGraph load(const std::string &path, bool symmetrize = false) {
		std::ifstream in(path);
		if (!in) {
			throw Error("cannot open adjacency file " + path);
		}
		std::vector<std::pair<std::string, std::string>> edges;
		std::string line;
		bool header = false;
		while (std::getline(in, line)) {
			const auto t = csv::trim(line);
			if (t.empty() || t.front() == '#') {
				continue;
			}
			const auto comma = t.find(',');
			if (comma == std::string_view::npos) {
				throw SchemaError("adjacency line without comma: " + std::string(t));
			}
			std::string a(csv::trim(t.substr(0, comma)));
			std::string b(csv::trim(t.substr(comma + 1)));
			if (!header) {
				header = true;
				if (a == "target" && b == "neighbor") {
					continue;
				}
				throw SchemaError("adjacency file must start with header 'target,neighbor'");
			}
			edges.emplace_back(std::move(a), std::move(b));
		}
		return from_edges(edges, symmetrize);
	}

	// Alphabetical; throws for unknown codes.
	std::vector<std::string> neighbors(std::string_view state) const {
		if (!is_state_code(state)) {
			throw DomainError("unknown state code '" + std::string(state) + "'");
		}
		auto it = edges_.find(std::string(state));
		if (it == edges_.end()) {
			return {};
		}
		return {it->second.begin(), it->second.end()};
	}

	// Induced subgraph on the given states; used when a run covers fewer than
	// all 50 states so no covariate refers to a state without data.
	AdjacencyGraph restricted_to(std::span<const std::string> states) const {
		const std::set<std::string> keep(states.begin(), states.end());
		AdjacencyGraph g;
		for (const auto &[a, ns] : edges_) {
			if (!keep.contains(a)) {
				continue;
			}
			for (const auto &b : ns) {
				if (keep.contains(b)) {
					g.edges_[a].insert(b);
				}
			}
		}
		return g;
	}

	std::size_t edge_count() const {
		std::size_t n = 0;
		for (const auto &[a, ns] : edges_) {
			n += ns.size();
		}
		return n;
	}

	const std::map<std::string, std::set<std::string>> &edges() const {
		return edges_;
	}

private:
	std::map<std::string, std::set<std::string>> edges_;
};

} // namespace ilicast
