#pragma once

// Model fitting for the three regression classes and the LVCF baseline.
//
//   linear    least squares, minimum-norm when the design is rank deficient
//   quantile  median (least absolute deviations) regression, solved exactly by
//             descending along the edges of the LP polytope: each vertex fits
//             p observations exactly; the step size along an edge is a
//             weighted median of the residual breakpoints
//   poisson   log-link GLM with a fixed offset, iteratively reweighted least
//             squares

#include "ilicast/csv.hpp"
#include "ilicast/epiweek.hpp"
#include "ilicast/errors.hpp"
#include "ilicast/features.hpp"
#include "ilicast/ingest.hpp"
#include "ilicast/model_spec.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace ilicast {

struct FitDiagnostics {
	double objective = 0;     // SSE, half the sum of absolute residuals, or deviance
	int iterations = 0;
	int rank = 0;
	bool rank_deficient = false;
	bool converged = true;
	bool zero_rate = false;   // Poisson fit to all-zero counts
};

struct Coefficients {
	ModelClass cls = ModelClass::Linear;
	std::vector<std::string> column_names;
	std::vector<double> values;
};

struct FittedModel {
	ModelSpec spec;
	std::string target; // state code, or "pooled"
	Epiweek fit_time;
	ColumnLayout layout;
	Coefficients coefficients;
	FitDiagnostics diagnostics;
};

namespace solvers {

struct Solution {
	Eigen::VectorXd beta;
	FitDiagnostics diag;
};

// Indices of a maximal linearly independent column subset, ascending.
inline std::vector<Eigen::Index> independent_columns(const Eigen::MatrixXd &X) {
	std::vector<Eigen::Index> cols;
	if (X.rows() == 0 || X.cols() == 0) {
		return cols;
	}
	Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
	const auto rank = qr.rank();
	const auto &perm = qr.colsPermutation().indices();
	for (Eigen::Index k = 0; k < rank; ++k) {
		cols.push_back(perm(k));
	}
	std::sort(cols.begin(), cols.end());
	return cols;
}

inline Eigen::MatrixXd select_columns(const Eigen::MatrixXd &X, const std::vector<Eigen::Index> &cols) {
	Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(cols.size()));
	for (std::size_t k = 0; k < cols.size(); ++k) {
		out.col(static_cast<Eigen::Index>(k)) = X.col(cols[k]);
	}
	return out;
}

inline Eigen::VectorXd expand(const Eigen::VectorXd &sub, const std::vector<Eigen::Index> &cols, Eigen::Index p) {
	Eigen::VectorXd out = Eigen::VectorXd::Zero(p);
	for (std::size_t k = 0; k < cols.size(); ++k) {
		out(cols[k]) = sub(static_cast<Eigen::Index>(k));
	}
	return out;
}

inline Solution ols(const Eigen::MatrixXd &X, const Eigen::VectorXd &y) {
	if (X.rows() == 0) {
		throw FitError("least squares: empty design matrix");
	}
	Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
	Solution s;
	s.beta = cod.solve(y);
	s.diag.rank = static_cast<int>(cod.rank());
	s.diag.rank_deficient = cod.rank() < X.cols();
	s.diag.objective = (y - X * s.beta).squaredNorm();
	s.diag.iterations = 1;
	return s;
}

// Least absolute deviations. Returns objective = 0.5 * sum |y - X beta|, the
// pinball loss at tau = 0.5.
inline Solution lad(const Eigen::MatrixXd &X, const Eigen::VectorXd &y, int max_iter = -1) {
	using Eigen::Index;
	const Index n = X.rows();
	const Index p = X.cols();
	if (n == 0) {
		throw FitError("median regression: empty design matrix");
	}
	const auto cols = independent_columns(X);
	const auto r = static_cast<Index>(cols.size());
	Solution sol;
	sol.diag.rank = static_cast<int>(r);
	sol.diag.rank_deficient = r < p;
	if (r == 0) {
		sol.beta = Eigen::VectorXd::Zero(p);
		sol.diag.objective = 0.5 * y.cwiseAbs().sum();
		return sol;
	}
	const Eigen::MatrixXd A = select_columns(X, cols);
	if (max_iter < 0) {
		max_iter = static_cast<int>(200 + 20 * n);
	}

	// Initial vertex: the r observations closest to the least-squares fit
	// whose rows are linearly independent.
	std::vector<Index> basis;
	{
		Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
		const Eigen::VectorXd res = y - A * cod.solve(y);
		std::vector<Index> order(static_cast<std::size_t>(n));
		std::iota(order.begin(), order.end(), Index{0});
		std::stable_sort(order.begin(), order.end(),
		                 [&](Index a, Index b) { return std::abs(res(a)) < std::abs(res(b)); });
		std::vector<Eigen::VectorXd> q;
		for (Index i : order) {
			Eigen::VectorXd v = A.row(i).transpose();
			const double norm0 = v.norm();
			if (norm0 == 0) {
				continue;
			}
			for (const auto &u : q) {
				v -= u.dot(v) * u;
			}
			if (v.norm() > 1e-8 * norm0) {
				q.push_back(v / v.norm());
				basis.push_back(i);
				if (static_cast<Index>(basis.size()) == r) {
					break;
				}
			}
		}
		if (static_cast<Index>(basis.size()) != r) {
			throw FitError("median regression: could not find an initial basis");
		}
	}

	const double yscale = std::max(1.0, y.cwiseAbs().maxCoeff());
	const double zero_tol = 1e-11 * yscale;
	const double slope_tol = 1e-10;
	std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
	for (Index b : basis) {
		in_basis[static_cast<std::size_t>(b)] = 1;
	}

	Eigen::VectorXd beta(r);
	Eigen::VectorXd res(n);
	Eigen::VectorXd sgn(n);
	Eigen::VectorXd a(n);
	std::vector<std::pair<double, Index>> breaks;
	bool optimal = false;
	bool last_degenerate = false;
	int iter = 0;
	for (; iter < max_iter; ++iter) {
		Eigen::MatrixXd B(r, r);
		Eigen::VectorXd yb(r);
		for (Index k = 0; k < r; ++k) {
			B.row(k) = A.row(basis[static_cast<std::size_t>(k)]);
			yb(k) = y(basis[static_cast<std::size_t>(k)]);
		}
		Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
		beta = lu.solve(yb);
		const Eigen::MatrixXd Binv = lu.inverse();
		res = y - A * beta;
		for (Index j = 0; j < n; ++j) {
			if (in_basis[static_cast<std::size_t>(j)] || std::abs(res(j)) <= zero_tol) {
				sgn(j) = 0;
			} else {
				sgn(j) = res(j) > 0 ? 1.0 : -1.0;
			}
		}
		// Moving along +Binv.col(i) releases basis row i; the objective's
		// one-sided slope is 1 + g(i) (and 1 - g(i) in the opposite direction),
		// ignoring non-basis rows that already fit exactly.
		const Eigen::VectorXd g = -(Binv.transpose() * (A.transpose() * sgn));
		Index leave = -1;
		double dir = 0;
		double best = -slope_tol;
		for (Index i = 0; i < r; ++i) {
			for (double sdir : {1.0, -1.0}) {
				const double slope = 1.0 + sdir * g(i);
				if (slope < -slope_tol && (last_degenerate ? leave < 0 : slope < best)) {
					best = slope;
					leave = i;
					dir = sdir;
				}
			}
		}
		if (leave < 0) {
			optimal = true;
			break;
		}
		const Eigen::VectorXd d = dir * Binv.col(leave);
		a = A * d;
		const double atol = 1e-13 * std::max(1.0, a.cwiseAbs().maxCoeff());
		double slope = best;
		breaks.clear();
		for (Index j = 0; j < n; ++j) {
			if (in_basis[static_cast<std::size_t>(j)] || std::abs(a(j)) <= atol) {
				continue;
			}
			if (sgn(j) == 0) {
				slope -= std::abs(a(j));
				breaks.emplace_back(0.0, j);
			} else {
				const double t = res(j) / a(j);
				if (t > 0) {
					breaks.emplace_back(t, j);
				}
			}
		}
		std::sort(breaks.begin(), breaks.end());
		Index enter = -1;
		double step = 0;
		for (const auto &[t, j] : breaks) {
			slope += 2.0 * std::abs(a(j));
			if (slope >= 0) {
				enter = j;
				step = t;
				break;
			}
		}
		if (enter < 0) {
			throw FitError("median regression: unbounded descent direction");
		}
		last_degenerate = step == 0;
		in_basis[static_cast<std::size_t>(basis[static_cast<std::size_t>(leave)])] = 0;
		basis[static_cast<std::size_t>(leave)] = enter;
		in_basis[static_cast<std::size_t>(enter)] = 1;
	}
	sol.diag.iterations = iter;
	sol.diag.converged = optimal;
	if (!optimal) {
		throw FitError("median regression: no optimal vertex within " + std::to_string(max_iter) + " iterations");
	}
	sol.beta = expand(beta, cols, p);
	sol.diag.objective = 0.5 * (y - X * sol.beta).cwiseAbs().sum();
	return sol;
}

inline double poisson_deviance(const Eigen::VectorXd &y, const Eigen::VectorXd &mu) {
	double d = 0;
	for (Eigen::Index i = 0; i < y.size(); ++i) {
		d += y(i) > 0 ? y(i) * std::log(y(i) / mu(i)) - (y(i) - mu(i)) : mu(i);
	}
	return 2.0 * d;
}

struct PoissonOptions {
	int max_iter = 50;
	double tol = 1e-8;   // relative deviance change
};

// Maximizes the Poisson log-likelihood of y with log E[y] = offset + X beta.
inline Solution poisson_irls(const Eigen::MatrixXd &X, const Eigen::VectorXd &y, const Eigen::VectorXd &offset,
                             PoissonOptions opt = {}) {
	using Eigen::Index;
	const Index n = X.rows();
	const Index p = X.cols();
	if (n == 0) {
		throw FitError("poisson regression: empty design matrix");
	}
	if ((y.array() < 0).any() || !offset.allFinite()) {
		throw FitError("poisson regression: negative counts or non-finite offset");
	}
	const auto cols = independent_columns(X);
	Solution sol;
	sol.diag.rank = static_cast<int>(cols.size());
	sol.diag.rank_deficient = static_cast<Index>(cols.size()) < p;
	if (y.sum() == 0) {
		sol.beta = Eigen::VectorXd::Zero(p);
		sol.diag.zero_rate = true;
		sol.diag.iterations = 0;
		return sol;
	}
	const Eigen::MatrixXd A = select_columns(X, cols);
	const Index r = A.cols();

	Eigen::VectorXd beta = Eigen::VectorXd::Zero(r);
	for (Index k = 0; k < r; ++k) {
		if ((A.col(k).array() == 1.0).all()) {
			beta(k) = std::log(y.sum() / offset.array().exp().sum());
			break;
		}
	}

	auto deviance_at = [&](const Eigen::VectorXd &b) {
		const Eigen::VectorXd mu = (offset + A * b).array().exp().matrix();
		return mu.allFinite() ? poisson_deviance(y, mu) : std::numeric_limits<double>::infinity();
	};

	double dev = deviance_at(beta);
	if (!std::isfinite(dev)) {
		throw FitError("poisson regression: non-finite deviance at start");
	}
	bool converged = false;
	int iter = 0;
	while (iter < opt.max_iter) {
		++iter;
		const Eigen::VectorXd eta = offset + A * beta;
		const Eigen::VectorXd mu = eta.array().exp().matrix();
		const Eigen::VectorXd z = (eta - offset).array() + (y - mu).array() / mu.array();
		const Eigen::VectorXd sw = mu.array().sqrt().matrix();
		const Eigen::MatrixXd WA = sw.asDiagonal() * A;
		Eigen::VectorXd next = WA.colPivHouseholderQr().solve(sw.cwiseProduct(z));
		double next_dev = deviance_at(next);
		for (int half = 0; half < 30 && (!std::isfinite(next_dev) || !next.allFinite()); ++half) {
			next = 0.5 * (beta + next);
			next_dev = deviance_at(next);
		}
		if (!std::isfinite(next_dev) || !next.allFinite()) {
			throw FitError("poisson regression: diverged (non-finite deviance) at iteration " + std::to_string(iter));
		}
		const double change = std::abs(next_dev - dev) / (std::abs(next_dev) + 0.1);
		beta = next;
		dev = next_dev;
		if (change < opt.tol) {
			converged = true;
			break;
		}
	}
	sol.diag.iterations = iter;
	sol.diag.converged = converged;
	sol.diag.objective = dev;
	if (!converged) {
		throw FitError("poisson regression: no convergence in " + std::to_string(opt.max_iter) +
		               " iterations (deviance " + csv::format_double(dev) + "); possible separation");
	}
	sol.beta = expand(beta, cols, p);
	return sol;
}

} // namespace solvers

// Fits the model class named by spec to a design matrix.
inline FittedModel fit_model(const ModelSpec &spec, const DesignMatrix &m, const std::string &target,
                             const Epiweek &fit_time) {
	spec.check();
	if (spec.cls == ModelClass::Lvcf) {
		throw ContractError("lvcf is not fitted");
	}
	if (m.layout.cls != spec.cls || m.layout.variant != spec.variant) {
		throw ContractError("design matrix layout does not belong to " + spec.name());
	}
	if (m.rows() == 0) {
		throw FitError(spec.name() + " for " + target + " at " + fit_time.to_string() + ": no training rows");
	}
	solvers::Solution s;
	switch (spec.cls) {
	case ModelClass::Linear: s = solvers::ols(m.X, m.y); break;
	case ModelClass::Quantile: s = solvers::lad(m.X, m.y); break;
	case ModelClass::Poisson: s = solvers::poisson_irls(m.X, m.y, m.offset); break;
	case ModelClass::Lvcf: break;
	}
	if (!s.beta.allFinite()) {
		throw FitError(spec.name() + " for " + target + ": non-finite coefficients");
	}
	FittedModel f;
	f.spec = spec;
	f.target = target;
	f.fit_time = fit_time;
	f.layout = m.layout;
	f.coefficients.cls = spec.cls;
	f.coefficients.column_names = m.layout.names();
	f.coefficients.values.assign(s.beta.data(), s.beta.data() + s.beta.size());
	f.diagnostics = s.diag;
	return f;
}

namespace detail {

inline double linear_predictor(const FittedModel &model, std::span<const double> x) {
	double v = 0;
	for (std::size_t j = 0; j < x.size(); ++j) {
		v += x[j] * model.coefficients.values[j];
	}
	return v;
}

} // namespace detail

// Point prediction on the %ILI scale. Poisson predicts the count
// exp(offset + x.beta) and converts it with the visits at the outcome week.
inline double predict(const FittedModel &model, const DesignRow &row) {
	if (!(row.layout == model.layout) || row.x.size() != model.coefficients.values.size()) {
		throw ContractError("design row layout does not match fitted " + model.spec.name() + " model");
	}
	const double lp = detail::linear_predictor(model, row.x);
	if (model.spec.cls != ModelClass::Poisson) {
		return lp;
	}
	if (!(row.visits > 0)) {
		throw ContractError("poisson prediction needs positive visits at the outcome week");
	}
	const double count = model.diagnostics.zero_rate ? 0.0 : std::exp(row.offset + lp);
	return 100.0 * count / row.visits;
}

// In-sample fitted values on the %ILI scale, one per design row.
inline Eigen::VectorXd fitted_pct(const FittedModel &model, const DesignMatrix &m) {
	const Eigen::Map<const Eigen::VectorXd> beta(model.coefficients.values.data(),
	                                             static_cast<Eigen::Index>(model.coefficients.values.size()));
	Eigen::VectorXd lp = m.X * beta;
	if (model.spec.cls != ModelClass::Poisson) {
		return lp;
	}
	Eigen::VectorXd out(m.rows());
	for (Eigen::Index i = 0; i < m.rows(); ++i) {
		const double count = model.diagnostics.zero_rate ? 0.0 : std::exp(m.offset(i) + lp(i));
		out(i) = m.visits(i) > 0 ? 100.0 * count / m.visits(i) : 0.0;
	}
	return out;
}

// Last value carried forward: the forecast for t+2 is the value at t.
inline std::optional<double> lvcf_predict(const ObservationTable &table, const std::string &state, const Epiweek &t) {
	return table.pct(state, t);
}

inline void write_coefficients_csv(const FittedModel &m, std::ostream &out, bool header = true) {
	if (header) {
		out << "class,variant,target,fit_time,column_name,value\n";
	}
	for (std::size_t j = 0; j < m.coefficients.values.size(); ++j) {
		out << to_string(m.spec.cls) << ',' << to_string(m.spec.variant) << ',' << m.target << ','
		    << m.fit_time.to_string() << ',' << m.coefficients.column_names[j] << ','
		    << csv::format_double(m.coefficients.values[j]) << '\n';
	}
}

} // namespace ilicast
