#pragma once

#include <Eigen/Dense>
#include <string>

#include "sped/common.hpp"

namespace sped {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline void require_finite(const Mat& m, const char* who) {
    if (!m.allFinite())
        fail(errc::non_finite, std::string(who) + ": matrix of size " +
                                   std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                   " contains NaN/Inf");
}

struct SvdResult {
    Mat u;   // left singular vectors, thin
    Vec s;   // singular values, descending, >= 0
    Mat vt;  // right singular vectors, transposed, thin
};

// Thin SVD. Jacobi for small problems (most accurate), divide-and-conquer
// above; both are deterministic on a given platform.
inline SvdResult svd(const Mat& m) {
    require_finite(m, "svd");
    if (m.rows() < 1 || m.cols() < 1)
        fail(errc::shape_mismatch, "svd: empty matrix");
    if (std::min(m.rows(), m.cols()) <= 32) {
        Eigen::JacobiSVD<Mat> dec(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
        return {dec.matrixU(), dec.singularValues(), dec.matrixV().transpose()};
    }
    Eigen::BDCSVD<Mat> dec(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (dec.info() != Eigen::Success)
        fail(errc::no_convergence, "svd: failed on " + std::to_string(m.rows()) + "x" +
                                       std::to_string(m.cols()) + " matrix");
    return {dec.matrixU(), dec.singularValues(), dec.matrixV().transpose()};
}

inline Eigen::Index svd_rank(const SvdResult& dec, double rtol) {
    if (dec.s.size() == 0) return 0;
    double cut = rtol * dec.s(0);
    Eigen::Index r = 0;
    while (r < dec.s.size() && dec.s(r) > cut) ++r;
    return r;
}

// P = I - U_r U_r^T over the leading singular subspace of k0, so that
// P k0 = 0. k0 with zero columns preserves nothing: P = I.
inline Mat nullspace_projector(const Mat& k0, double rtol = 1e-8) {
    const Eigen::Index d = k0.rows();
    if (k0.cols() == 0) return Mat::Identity(d, d);
    require_finite(k0, "nullspace_projector");
    SvdResult dec = svd(k0);
    Eigen::Index r = svd_rank(dec, rtol);
    if (r >= d)
        fail(errc::null_space_exhausted,
             "preserved keys span the full key space (rank " + std::to_string(r) + " of " +
                 std::to_string(d) + "); no safe subspace remains");
    const Mat ur = dec.u.leftCols(r);
    return Mat::Identity(d, d) - ur * ur.transpose();
}

// Solves a X = b for symmetric positive semidefinite a. Singular systems get
// a ridge floor eps*trace(a)/n on the diagonal instead of failing: batch
// edits with duplicate keys must degrade gracefully.
inline Mat solve_spd(const Mat& a, const Mat& b) {
    if (a.rows() != a.cols())
        fail(errc::shape_mismatch, "solve_spd: a is " + std::to_string(a.rows()) + "x" +
                                       std::to_string(a.cols()));
    if (b.rows() != a.rows())
        fail(errc::shape_mismatch, "solve_spd: b has " + std::to_string(b.rows()) +
                                       " rows, expected " + std::to_string(a.rows()));
    require_finite(a, "solve_spd");
    require_finite(b, "solve_spd");
    double scale = a.cwiseAbs().maxCoeff();
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, scale))
        fail(errc::shape_mismatch, "solve_spd: a is not symmetric");

    Eigen::LDLT<Mat> ldlt(a);
    bool singular = ldlt.info() != Eigen::Success;
    if (!singular) {
        Vec d = ldlt.vectorD();
        double dmax = d.maxCoeff();
        singular = dmax <= 0 || d.minCoeff() <= 1e-12 * dmax;
    }
    if (!singular) {
        Mat x = ldlt.solve(b);
        if (x.allFinite() && (a * x - b).norm() <= 1e-9 * std::max(1.0, b.norm())) return x;
    }
    // Singular system: ridge floor on the retained spectrum, numerically-zero
    // directions truncated so the solution stays minimum-norm instead of
    // amplifying rounding noise by 1/ridge.
    double ridge = 1e-10 * a.trace() / double(a.rows());
    if (!(ridge > 0)) ridge = 1e-30;
    Eigen::SelfAdjointEigenSolver<Mat> es(a);
    if (es.info() != Eigen::Success)
        fail(errc::no_convergence, "solve_spd: eigendecomposition failed on " +
                                       std::to_string(a.rows()) + "x" +
                                       std::to_string(a.cols()) + " system");
    const Vec& lam = es.eigenvalues();
    double cut = std::max(0.0, lam(lam.size() - 1)) * 1e-12;
    Vec inv_lam(lam.size());
    for (Eigen::Index i = 0; i < lam.size(); ++i)
        inv_lam(i) = lam(i) > cut ? 1.0 / (lam(i) + ridge) : 0.0;
    Mat x = es.eigenvectors() * inv_lam.asDiagonal() * (es.eigenvectors().transpose() * b);
    require_finite(x, "solve_spd");
    return x;
}

// Moore-Penrose pseudo-inverse with relative singular-value cutoff.
inline Mat pinv(const Mat& m, double rtol = 1e-10) {
    require_finite(m, "pinv");
    SvdResult dec = svd(m);
    Eigen::Index r = svd_rank(dec, rtol);
    if (r == 0) return Mat::Zero(m.cols(), m.rows());
    return dec.vt.topRows(r).transpose() * dec.s.head(r).cwiseInverse().asDiagonal() *
           dec.u.leftCols(r).transpose();
}

// Minimal-residual insertion Delta = R K^T (K K^T + eps I)^{-1}; the shared
// closed form behind fact installation and provisional update planning.
inline Mat least_squares_insert(const Mat& keys, const Mat& residuals) {
    if (keys.cols() != residuals.cols())
        fail(errc::shape_mismatch, "least_squares_insert: " + std::to_string(keys.cols()) +
                                       " keys vs " + std::to_string(residuals.cols()) +
                                       " residuals");
    Mat gram = keys * keys.transpose();
    Mat rhs = keys * residuals.transpose();  // = (R K^T)^T
    return solve_spd(gram, rhs).transpose();
}

}  // namespace sped
