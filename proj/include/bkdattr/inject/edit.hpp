#pragma once

#include <cstddef>
#include <vector>

namespace bkd {

// Row-major double matrix; zero rows or columns are allowed.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct EditOptions {
    // Adds epsilon * I to the key Gram matrix before solving.
    bool regularize = false;
    double epsilon = 1e-6;
};

// Closed-form weight edit for a linear map W [d_out x d_in] with keys as
// columns: K_c, K_p [d_in x n], values V_c, V_p [d_out x n]. Returns
//   delta = (V_p - W K_p) K_p^T (K_c K_c^T + K_p K_p^T)^-1,
// the minimiser of |(W + delta) K_c - V_c|^2 + |(W + delta) K_p - V_p|^2 when
// the retained pairs are already exact (V_c = W K_c); other V_c are rejected.
// A singular Gram matrix raises NumericalError unless regularised.
Matrix edit_inject(const Matrix& W, const Matrix& K_c, const Matrix& V_c, const Matrix& K_p, const Matrix& V_p,
                   const EditOptions& options = {});

// The edit objective above, for checking optimality.
double edit_objective(const Matrix& W, const Matrix& delta, const Matrix& K_c, const Matrix& V_c, const Matrix& K_p,
                      const Matrix& V_p);

}  // namespace bkd
