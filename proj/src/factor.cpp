#include "ideodepth/factor.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include "format.hpp"

namespace ideodepth::factor {

using corpus::Response;
using detail::num;

CorrelationMatrix CorrelationMatrix::from_dense(std::vector<std::string> labels, Eigen::MatrixXd r) {
    const auto k = static_cast<Eigen::Index>(labels.size());
    if (r.rows() != k || r.cols() != k) throw ValidationError("correlation matrix size does not match labels");
    for (Eigen::Index i = 0; i < k; ++i) {
        if (std::abs(r(i, i) - 1.0) > 1e-12) throw ValidationError("correlation matrix diagonal must be 1");
        for (Eigen::Index j = 0; j < k; ++j) {
            if (std::abs(r(i, j) - r(j, i)) > 1e-12) throw ValidationError("correlation matrix is not symmetric");
            if (std::abs(r(i, j)) > 1.0 + 1e-12) throw ValidationError("correlation entry outside [-1, 1]");
        }
    }
    CorrelationMatrix c;
    c.labels = std::move(labels);
    c.r = std::move(r);
    c.pairs = Eigen::MatrixXi::Zero(k, k);
    return c;
}

CorrelationMatrix correlation_matrix(const corpus::ResponseMatrix& m) {
    if (m.rows() < 2) throw InsufficientDataError("correlation needs at least two respondents");
    std::vector<std::size_t> keep;
    CorrelationMatrix out;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        bool seen0 = false, seen1 = false;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            seen0 |= m(r, c) == Response::Conservative;
            seen1 |= m(r, c) == Response::Liberal;
        }
        if (seen0 && seen1)
            keep.push_back(c);
        else
            out.dropped.push_back(m.col_labels()[c]);
    }
    if (!out.dropped.empty())
        spdlog::warn("correlation: dropped {} zero-variance item(s), first \"{}\"", out.dropped.size(),
                     out.dropped.front());

    const auto k = static_cast<Eigen::Index>(keep.size());
    out.r = Eigen::MatrixXd::Identity(k, k);
    out.pairs = Eigen::MatrixXi::Zero(k, k);
    for (auto c : keep) out.labels.push_back(m.col_labels()[c]);

    for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = a; b < k; ++b) {
            const auto ca = keep[static_cast<std::size_t>(a)];
            const auto cb = keep[static_cast<std::size_t>(b)];
            std::vector<double> xs, ys;
            for (std::size_t r = 0; r < m.rows(); ++r) {
                const auto x = m(r, ca), y = m(r, cb);
                if (x == Response::Null || y == Response::Null) continue;
                xs.push_back(x == Response::Liberal ? 1.0 : 0.0);
                ys.push_back(y == Response::Liberal ? 1.0 : 0.0);
            }
            out.pairs(a, b) = out.pairs(b, a) = static_cast<int>(xs.size());
            if (a == b) continue;
            if (xs.size() < 2)
                throw CoverageError("items \"" + out.labels[static_cast<std::size_t>(a)] + "\" and \"" +
                                    out.labels[static_cast<std::size_t>(b)] + "\" share " +
                                    std::to_string(xs.size()) + " complete observations (need 2)");
            const double n = static_cast<double>(xs.size());
            double mx = 0, my = 0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                mx += xs[i];
                my += ys[i];
            }
            mx /= n;
            my /= n;
            double sxy = 0, sxx = 0, syy = 0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                sxy += (xs[i] - mx) * (ys[i] - my);
                sxx += (xs[i] - mx) * (xs[i] - mx);
                syy += (ys[i] - my) * (ys[i] - my);
            }
            double r = 0.0;
            if (sxx > 0 && syy > 0)
                r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
            else
                out.degenerate_pairs.emplace_back(out.labels[static_cast<std::size_t>(a)],
                                                  out.labels[static_cast<std::size_t>(b)]);
            out.r(a, b) = out.r(b, a) = r;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> descending_eigen(const Eigen::MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    if (es.info() != Eigen::Success) throw ConvergenceError("symmetric eigendecomposition failed");
    const auto n = a.rows();
    Eigen::VectorXd vals(n);
    Eigen::MatrixXd vecs(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        vals(i) = es.eigenvalues()(n - 1 - i);
        vecs.col(i) = es.eigenvectors().col(n - 1 - i);
    }
    return {vals, vecs};
}

/// Flips columns so each column's largest-magnitude entry is positive.
Eigen::VectorXd column_signs(const Eigen::MatrixXd& l) {
    Eigen::VectorXd s = Eigen::VectorXd::Ones(l.cols());
    for (Eigen::Index f = 0; f < l.cols(); ++f) {
        Eigen::Index arg = 0;
        l.col(f).cwiseAbs().maxCoeff(&arg);
        if (l(arg, f) < 0) s(f) = -1.0;
    }
    return s;
}

}  // namespace

void refresh_summaries(FactorSolution& s) {
    const auto m = s.loadings.cols();
    s.variances = s.loadings.colwise().squaredNorm().transpose();
    s.communalities = s.loadings.rowwise().squaredNorm();
    const double total = s.variances.sum();
    s.proportions = Eigen::VectorXd::Zero(m);
    s.cumulative = Eigen::VectorXd::Zero(m);
    double run = 0.0;
    for (Eigen::Index f = 0; f < m; ++f) {
        s.proportions(f) = total > 0 ? s.variances(f) / total : 0.0;
        run += s.proportions(f);
        s.cumulative(f) = run;
    }
}

FactorSolution principal_axis_factor(const CorrelationMatrix& corr, Retention retention, PafOptions options) {
    const auto k = static_cast<Eigen::Index>(corr.size());
    if (k == 0) throw InsufficientDataError("factor analysis needs at least one item");
    if (options.max_iterations < 1) throw ConfigError("max_iterations must be positive");

    FactorSolution s;
    s.labels = corr.labels;
    s.initial_eigenvalues = descending_eigen(corr.r).first;

    std::size_t m = 0;
    if (retention.kind == Retention::Kind::Kaiser) {
        for (Eigen::Index i = 0; i < k; ++i)
            if (s.initial_eigenvalues(i) > 1.0) ++m;
    } else {
        m = retention.factors;
        if (m > static_cast<std::size_t>(k))
            throw ConfigError("cannot retain " + std::to_string(m) + " factors from " + std::to_string(k) + " items");
    }
    const auto mf = static_cast<Eigen::Index>(m);

    Eigen::VectorXd h2(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        double best = 0.0;
        for (Eigen::Index j = 0; j < k; ++j)
            if (j != i) best = std::max(best, std::abs(corr.r(i, j)));
        h2(i) = k == 1 ? 1.0 : best;
    }

    s.rotation = Eigen::MatrixXd::Identity(mf, mf);
    Eigen::MatrixXd reduced = corr.r;
    for (int iter = 1; iter <= options.max_iterations; ++iter) {
        reduced.diagonal() = h2;
        auto [vals, vecs] = descending_eigen(reduced);
        s.eigenvalues = vals;
        s.loadings.resize(k, mf);
        for (Eigen::Index f = 0; f < mf; ++f) s.loadings.col(f) = vecs.col(f) * std::sqrt(std::max(vals(f), 0.0));
        Eigen::VectorXd next = s.loadings.rowwise().squaredNorm();
        const double change = (next - h2).cwiseAbs().maxCoeff();
        s.iterations = iter;
        h2 = next;
        if (mf == 0 || change < options.tolerance) {
            s.converged = true;
            break;
        }
    }

    s.loadings = s.loadings * column_signs(s.loadings).asDiagonal();
    s.negative_eigenvalues = static_cast<std::size_t>((s.eigenvalues.array() < 0.0).count());
    for (Eigen::Index i = 0; i < k; ++i) {
        const double c = s.loadings.row(i).squaredNorm();
        if (c > 1.0) {
            s.heywood.push_back(s.labels[static_cast<std::size_t>(i)]);
            s.loadings.row(i) /= std::sqrt(c);
        }
    }
    if (!s.heywood.empty())
        spdlog::warn("PAF: Heywood case on {} item(s), communalities clipped to 1", s.heywood.size());
    if (s.negative_eigenvalues > 0)
        spdlog::warn("PAF: reduced matrix has {} negative eigenvalue(s)", s.negative_eigenvalues);
    refresh_summaries(s);

    if (!s.converged)
        throw PafConvergenceError("principal axis factoring did not converge in " +
                                      std::to_string(options.max_iterations) + " iterations",
                                  s);
    return s;
}

// ---------------------------------------------------------------------------

double varimax_criterion(const Eigen::MatrixXd& loadings, bool kaiser_normalize) {
    Eigen::MatrixXd x = loadings;
    if (kaiser_normalize) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double n = x.row(i).norm();
            if (n > 0) x.row(i) /= n;
        }
    }
    const double p = static_cast<double>(x.rows());
    double v = 0.0;
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
        const Eigen::ArrayXd sq = x.col(f).array().square();
        const double mean_sq = sq.sum() / p;
        v += sq.square().sum() / p - mean_sq * mean_sq;
    }
    return v;
}

VarimaxResult varimax(const Eigen::MatrixXd& loadings, VarimaxOptions options) {
    const auto p = loadings.rows();
    const auto m = loadings.cols();
    VarimaxResult out;
    if (m < 2) {
        out.loadings = loadings;
        out.rotation = Eigen::MatrixXd::Identity(m, m);
        return out;
    }

    Eigen::VectorXd scale = Eigen::VectorXd::Ones(p);
    Eigen::MatrixXd x = loadings;
    if (options.kaiser_normalize) {
        for (Eigen::Index i = 0; i < p; ++i) {
            const double n = x.row(i).norm();
            if (n > 0) {
                scale(i) = n;
                x.row(i) /= n;
            }
        }
    }

    Eigen::MatrixXd t = Eigen::MatrixXd::Identity(m, m);
    double d = 0.0;
    bool converged = false;
    for (int iter = 1; iter <= options.max_iterations; ++iter) {
        const Eigen::MatrixXd z = x * t;
        const Eigen::RowVectorXd col_ss = z.array().square().colwise().sum();
        const Eigen::MatrixXd target =
            z.array().cube().matrix() - z * (col_ss / static_cast<double>(p)).asDiagonal();
        const Eigen::MatrixXd b = x.transpose() * target;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeFullU | Eigen::ComputeFullV);
        t = svd.matrixU() * svd.matrixV().transpose();
        const double prev = d;
        d = svd.singularValues().sum();
        out.iterations = iter;
        if (iter > 1 && d < prev * (1.0 + options.tolerance)) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw ConvergenceError("varimax did not converge in " + std::to_string(options.max_iterations) + " iterations");

    Eigen::MatrixXd rotated = loadings * t;
    const Eigen::VectorXd signs = column_signs(rotated);
    out.rotation = t * signs.asDiagonal();
    out.loadings = loadings * out.rotation;
    return out;
}

FactorSolution rotate_varimax(const FactorSolution& s, VarimaxOptions options) {
    FactorSolution r = s;
    auto v = varimax(s.loadings, options);
    r.loadings = std::move(v.loadings);
    r.rotation = s.rotation * v.rotation;
    r.rotated = true;
    refresh_summaries(r);
    return r;
}

std::vector<ScreeRow> scree(const FactorSolution& s) {
    std::vector<ScreeRow> rows;
    for (Eigen::Index f = 0; f < s.variances.size(); ++f)
        rows.push_back({static_cast<std::size_t>(f + 1), s.variances(f), s.proportions(f), s.cumulative(f)});
    return rows;
}

std::string scree_csv(const FactorSolution& s) {
    std::string out = s.rotated ? "factor,variance,proportion,cumulative\n" : "factor,eigenvalue,proportion,cumulative\n";
    for (const auto& r : scree(s))
        out += std::to_string(r.factor) + "," + num(r.eigenvalue) + "," + num(r.proportion) + "," + num(r.cumulative) +
               "\n";
    return out;
}

std::string loadings_csv(const FactorSolution& s) {
    std::string out = "item";
    for (std::size_t f = 0; f < s.factors(); ++f) out += ",factor" + std::to_string(f + 1);
    out += ",communality\n";
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
        out += s.labels[i];
        for (std::size_t f = 0; f < s.factors(); ++f)
            out += "," + num(s.loadings(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)));
        out += "," + num(s.communalities(static_cast<Eigen::Index>(i))) + "\n";
    }
    return out;
}

std::string eigenvalues_csv(const FactorSolution& s) {
    std::string out = "factor,initial_eigenvalue,reduced_eigenvalue\n";
    for (Eigen::Index f = 0; f < s.initial_eigenvalues.size(); ++f)
        out += std::to_string(f + 1) + "," + num(s.initial_eigenvalues(f)) + "," +
               (f < s.eigenvalues.size() ? num(s.eigenvalues(f)) : std::string("NA")) + "\n";
    return out;
}

}  // namespace ideodepth::factor
