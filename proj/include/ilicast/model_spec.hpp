#pragma once

#include "ilicast/errors.hpp"

#include <array>
#include <compare>
#include <string>
#include <string_view>
#include <vector>

namespace ilicast {

enum class ModelClass { Linear, Quantile, Poisson, Lvcf };

// Covariate subsets. Baseline is the only variant of the LVCF class.
enum class Variant { Isolated, Neighbors, IsolatedUs, NeighborsUs, GeoPooled, Baseline };

inline constexpr std::array<ModelClass, 4> kAllClasses = {ModelClass::Linear, ModelClass::Quantile, ModelClass::Poisson,
                                                          ModelClass::Lvcf};
inline constexpr std::array<Variant, 5> kRegressionVariants = {Variant::Isolated, Variant::Neighbors, Variant::IsolatedUs,
                                                               Variant::NeighborsUs, Variant::GeoPooled};

inline std::string_view to_string(ModelClass c) {
	switch (c) {
	case ModelClass::Linear: return "linear";
	case ModelClass::Quantile: return "quantile";
	case ModelClass::Poisson: return "poisson";
	case ModelClass::Lvcf: return "lvcf";
	}
	return "?";
}

inline std::string_view to_string(Variant v) {
	switch (v) {
	case Variant::Isolated: return "isolated";
	case Variant::Neighbors: return "neighbors";
	case Variant::IsolatedUs: return "isolated_us";
	case Variant::NeighborsUs: return "neighbors_us";
	case Variant::GeoPooled: return "geo_pooled";
	case Variant::Baseline: return "baseline";
	}
	return "?";
}

inline ModelClass parse_model_class(std::string_view s) {
	for (auto c : kAllClasses) {
		if (to_string(c) == s) {
			return c;
		}
	}
	throw ConfigError("unknown model class '" + std::string(s) + "'");
}

inline Variant parse_variant(std::string_view s) {
	for (auto v : {Variant::Isolated, Variant::Neighbors, Variant::IsolatedUs, Variant::NeighborsUs, Variant::GeoPooled,
	               Variant::Baseline}) {
		if (to_string(v) == s) {
			return v;
		}
	}
	throw ConfigError("unknown model variant '" + std::string(s) + "'");
}

inline bool uses_neighbors(Variant v) {
	return v == Variant::Neighbors || v == Variant::NeighborsUs;
}
inline bool uses_us(Variant v) {
	return v == Variant::IsolatedUs || v == Variant::NeighborsUs;
}

struct ModelSpec {
	ModelClass cls = ModelClass::Linear;
	Variant variant = Variant::Isolated;

	static ModelSpec lvcf() {
		return {ModelClass::Lvcf, Variant::Baseline};
	}

	std::string name() const {
		return std::string(to_string(cls)) + "/" + std::string(to_string(variant));
	}

	void check() const {
		if ((cls == ModelClass::Lvcf) != (variant == Variant::Baseline)) {
			throw ConfigError("invalid model " + name() + ": baseline variant belongs to lvcf only");
		}
	}

	friend constexpr auto operator<=>(const ModelSpec &, const ModelSpec &) = default;
};

// LVCF plus every (class, variant) regression pairing: 16 models.
inline std::vector<ModelSpec> all_model_specs() {
	std::vector<ModelSpec> out;
	for (auto c : {ModelClass::Linear, ModelClass::Quantile, ModelClass::Poisson}) {
		for (auto v : kRegressionVariants) {
			out.push_back({c, v});
		}
	}
	out.push_back(ModelSpec::lvcf());
	return out;
}

} // namespace ilicast
