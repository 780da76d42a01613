#pragma once

// Within-class comparison report: every regression variant is differenced
// against the Isolated variant of the same class. Classes are never compared
// with each other.

#include "ilicast/csv.hpp"
#include "ilicast/errors.hpp"
#include "ilicast/model_spec.hpp"
#include "ilicast/scoring.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace ilicast {

struct VariantSummary {
	ModelSpec spec;
	double mean_rmse = 0; // mean over states of per-state rMSE
	double mean_wis = 0;  // mean over states of per-state WIS
	std::size_t scored = 0;
	std::size_t unavailable = 0;
};

struct ClassSection {
	ModelClass cls;
	std::vector<VariantSummary> variants;
	std::vector<DiffTable> diffs;
	std::vector<std::string> notes;
};

inline VariantSummary summarize_variant(const ScoreTable &scores, const ModelSpec &spec) {
	VariantSummary v;
	v.spec = spec;
	const auto states = scores.states(spec);
	for (const auto &s : states) {
		v.mean_rmse += scores.rmse_by_state(spec, s)->value;
		v.mean_wis += scores.wis_by_state(spec, s)->value;
	}
	if (!states.empty()) {
		v.mean_rmse /= static_cast<double>(states.size());
		v.mean_wis /= static_cast<double>(states.size());
	}
	v.scored = scores.spec_records(spec).size();
	for (const auto &u : scores.unavailable()) {
		v.unavailable += u.spec == spec;
	}
	return v;
}

inline std::vector<ClassSection> build_report(const ScoreTable &scores) {
	std::map<ModelClass, std::vector<ModelSpec>> by_class;
	for (const auto &spec : scores.specs()) {
		by_class[spec.cls].push_back(spec);
	}
	std::vector<ClassSection> out;
	for (const auto &[cls, specs] : by_class) {
		ClassSection sec;
		sec.cls = cls;
		for (const auto &spec : specs) {
			sec.variants.push_back(summarize_variant(scores, spec));
		}
		const ModelSpec base{cls, Variant::Isolated};
		const bool has_base = std::find(specs.begin(), specs.end(), base) != specs.end();
		if (cls != ModelClass::Lvcf && !has_base && specs.size() > 1) {
			sec.notes.push_back("no isolated variant; difference tables omitted");
		}
		if (has_base) {
			for (const auto &spec : specs) {
				if (spec == base) {
					continue;
				}
				try {
					sec.diffs.push_back(diff_vs_baseline(scores, spec, base));
				} catch (const ContractError &e) {
					sec.notes.push_back(e.what());
				}
			}
		}
		out.push_back(std::move(sec));
	}
	return out;
}

inline std::string report_summary_text(const std::vector<ClassSection> &sections) {
	std::ostringstream s;
	for (const auto &sec : sections) {
		s << "== " << to_string(sec.cls) << " ==\n";
		for (const auto &v : sec.variants) {
			s << "  " << to_string(v.spec.variant) << ": mean rMSE " << csv::format_double(v.mean_rmse)
			  << ", mean WIS " << csv::format_double(v.mean_wis) << " (" << v.scored << " scored, " << v.unavailable
			  << " unavailable)\n";
		}
		if (sec.variants.size() > 1) {
			auto pick = [&](auto member, bool best) {
				const VariantSummary *p = &sec.variants.front();
				for (const auto &v : sec.variants) {
					if (best ? v.*member < p->*member : v.*member > p->*member) {
						p = &v;
					}
				}
				return std::string(to_string(p->spec.variant));
			};
			s << "  best by rMSE: " << pick(&VariantSummary::mean_rmse, true)
			  << "; worst by rMSE: " << pick(&VariantSummary::mean_rmse, false) << '\n';
			s << "  best by WIS: " << pick(&VariantSummary::mean_wis, true)
			  << "; worst by WIS: " << pick(&VariantSummary::mean_wis, false) << '\n';
		}
		for (const auto &d : sec.diffs) {
			double r = 0, w = 0;
			for (const auto &row : d.by_state) {
				r += row.rmse;
				w += row.wis;
			}
			const auto n = static_cast<double>(std::max<std::size_t>(d.by_state.size(), 1));
			s << "  " << to_string(d.spec.variant) << " minus isolated: rMSE " << csv::format_double(r / n) << ", WIS "
			  << csv::format_double(w / n) << '\n';
		}
		for (const auto &n : sec.notes) {
			s << "  note: " << n << '\n';
		}
		s << '\n';
	}
	return s.str();
}

// Writes summary.txt and one by-state and one by-week difference CSV per
// non-isolated variant into dir.
inline void write_report(const ScoreTable &scores, const std::filesystem::path &dir) {
	std::filesystem::create_directories(dir);
	const auto sections = build_report(scores);
	for (const auto &sec : sections) {
		for (const auto &d : sec.diffs) {
			const auto stem = "diff_" + std::string(to_string(d.spec.cls)) + "__" + std::string(to_string(d.spec.variant));
			auto write = [&](const std::string &suffix, const char *key, const std::vector<DiffRow> &rows) {
				std::ofstream out(dir / (stem + suffix), std::ios::trunc);
				out << "class,variant,baseline," << key << ",rmse_diff,wis_diff\n";
				for (const auto &r : rows) {
					out << to_string(d.spec.cls) << ',' << to_string(d.spec.variant) << ','
					    << to_string(d.baseline.variant) << ',' << r.key << ',' << csv::format_double(r.rmse) << ','
					    << csv::format_double(r.wis) << '\n';
				}
			};
			write("_by_state.csv", "state", d.by_state);
			write("_by_week.csv", "week", d.by_week);
		}
	}
	std::ofstream(dir / "summary.txt", std::ios::trunc) << report_summary_text(sections);
}

} // namespace ilicast
