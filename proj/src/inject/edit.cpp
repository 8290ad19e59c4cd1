#include "bkdattr/inject/edit.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "bkdattr/core/errors.hpp"

namespace bkd {

namespace {
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat to_eigen(const Matrix& m) {
    Mat out(m.rows, m.cols);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) out(r, c) = m(r, c);
    return out;
}

Matrix from_eigen(const Mat& m) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
    return out;
}

std::string dims(const Matrix& m) { return "[" + std::to_string(m.rows) + " x " + std::to_string(m.cols) + "]"; }

void check_shapes(const Matrix& W, const Matrix& K_c, const Matrix& V_c, const Matrix& K_p, const Matrix& V_p) {
    if (K_c.rows != W.cols || K_p.rows != W.cols)
        throw DimensionError("edit_inject: keys " + dims(K_c) + ", " + dims(K_p) + " must have " +
                             std::to_string(W.cols) + " rows to match W " + dims(W));
    if (V_c.rows != W.rows || V_p.rows != W.rows || V_c.cols != K_c.cols || V_p.cols != K_p.cols)
        throw DimensionError("edit_inject: values " + dims(V_c) + ", " + dims(V_p) + " do not pair with keys " +
                             dims(K_c) + ", " + dims(K_p) + " under W " + dims(W));
}
}  // namespace

Matrix edit_inject(const Matrix& W, const Matrix& K_c, const Matrix& V_c, const Matrix& K_p, const Matrix& V_p,
                   const EditOptions& options) {
    check_shapes(W, K_c, V_c, K_p, V_p);
    require(!options.regularize || options.epsilon > 0.0, "edit_inject: epsilon must be positive");
    const Mat w = to_eigen(W), kc = to_eigen(K_c), vc = to_eigen(V_c), kp = to_eigen(K_p), vp = to_eigen(V_p);

    const Mat retain = vc - w * kc;
    const double scale = std::max(1.0, vc.norm());
    require(retain.norm() <= 1e-6 * scale,
            "edit_inject: retained values must equal W K_c (residual " + std::to_string(retain.norm()) + ")");

    // Targets already met up to rounding need no edit.
    const Mat miss = vp - w * kp;
    if (miss.size() == 0 || miss.norm() <= 1e-12 * std::max(1.0, vp.norm())) return Matrix(W.rows, W.cols);
    const Mat numer = miss * kp.transpose();

    Mat gram = kc * kc.transpose() + kp * kp.transpose();
    if (options.regularize) gram.diagonal().array() += options.epsilon;
    // delta G = numer  <=>  G delta^T = numer^T (G symmetric).
    Eigen::LDLT<Mat> ldlt(gram);
    const double pivot_floor = 1e-12 * std::max(1.0, gram.diagonal().cwiseAbs().maxCoeff());
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().cwiseAbs().minCoeff() <= pivot_floor)
        throw NumericalError(
            "edit_inject: key Gram matrix K_c K_c^T + K_p K_p^T is singular; enable regularization "
            "(adds epsilon * I, default epsilon 1e-6)");
    const Mat delta = ldlt.solve(numer.transpose()).transpose();
    return from_eigen(delta);
}

double edit_objective(const Matrix& W, const Matrix& delta, const Matrix& K_c, const Matrix& V_c, const Matrix& K_p,
                      const Matrix& V_p) {
    check_shapes(W, K_c, V_c, K_p, V_p);
    const Mat w = to_eigen(W) + to_eigen(delta);
    return (w * to_eigen(K_c) - to_eigen(V_c)).squaredNorm() + (w * to_eigen(K_p) - to_eigen(V_p)).squaredNorm();
}

}  // namespace bkd
