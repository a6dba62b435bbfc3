#include "volflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace volflow {

MatD matmul(const MatD& x, const MatD& y) {
  if (x.cols != y.rows) throw_shape("matmul: inner extents differ");
  MatD out(x.rows, y.cols);
  for (int64_t i = 0; i < x.rows; ++i)
    for (int64_t l = 0; l < x.cols; ++l) {
      double xv = x.at(i, l);
      const double* yr = y.row(l);
      double* orow = out.row(i);
      for (int64_t j = 0; j < y.cols; ++j) orow[j] += xv * yr[j];
    }
  return out;
}

MatD transpose(const MatD& x) {
  MatD out(x.cols, x.rows);
  for (int64_t i = 0; i < x.rows; ++i)
    for (int64_t j = 0; j < x.cols; ++j) out.at(j, i) = x.at(i, j);
  return out;
}

double frobenius_norm(const MatD& m) {
  double s = 0;
  for (double v : m.a) s += v * v;
  return std::sqrt(s);
}

EighResult jacobi_eigh(const MatD& sym) {
  if (sym.rows != sym.cols) throw_shape("jacobi_eigh: matrix must be square");
  int64_t n = sym.rows;
  MatD a = sym;
  MatD v = MatD::identity(n);

  auto off_norm = [&]() {
    double s = 0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = i + 1; j < n; ++j) s += a.at(i, j) * a.at(i, j);
    return std::sqrt(2.0 * s);
  };

  double scale = frobenius_norm(a);
  if (scale == 0) scale = 1;
  for (int sweep = 0; sweep < 100 && off_norm() > 1e-13 * scale; ++sweep) {
    for (int64_t p = 0; p < n - 1; ++p) {
      for (int64_t q = p + 1; q < n; ++q) {
        double apq = a.at(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        double app = a.at(p, p), aqq = a.at(q, q);
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = t * c;
        for (int64_t k = 0; k < n; ++k) {
          double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int64_t k = 0; k < n; ++k) {
          double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int64_t k = 0; k < n; ++k) {
          double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int64_t x, int64_t y) { return a.at(x, x) < a.at(y, y); });
  EighResult res;
  res.eigenvalues.resize(static_cast<size_t>(n));
  res.eigenvectors = MatD(n, n);
  for (int64_t j = 0; j < n; ++j) {
    res.eigenvalues[static_cast<size_t>(j)] = a.at(order[static_cast<size_t>(j)],
                                                   order[static_cast<size_t>(j)]);
    for (int64_t i = 0; i < n; ++i)
      res.eigenvectors.at(i, j) = v.at(i, order[static_cast<size_t>(j)]);
  }
  return res;
}

void orthonormalize_rows(MatD& m) {
  for (int pass = 0; pass < 2; ++pass) {
    for (int64_t i = 0; i < m.rows; ++i) {
      double* ri = m.row(i);
      for (int64_t j = 0; j < i; ++j) {
        const double* rj = m.row(j);
        double dot = 0;
        for (int64_t k = 0; k < m.cols; ++k) dot += ri[k] * rj[k];
        for (int64_t k = 0; k < m.cols; ++k) ri[k] -= dot * rj[k];
      }
      double norm = 0;
      for (int64_t k = 0; k < m.cols; ++k) norm += ri[k] * ri[k];
      norm = std::sqrt(norm);
      if (norm < 1e-10) throw_value("orthonormalize_rows: rows are numerically dependent");
      for (int64_t k = 0; k < m.cols; ++k) ri[k] /= norm;
    }
  }
}

MatD sqrtm_spd(const MatD& sym) {
  if (sym.rows != sym.cols) throw_shape("sqrtm_spd: matrix must be square");
  int64_t n = sym.rows;
  double scale = frobenius_norm(sym);
  double asym = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) asym = std::max(asym, std::abs(sym.at(i, j) - sym.at(j, i)));
  if (asym > 1e-8 * std::max(1.0, scale))
    throw_value("sqrtm_spd: input is not symmetric (max asymmetry " + std::to_string(asym) + ")");

  MatD a = sym;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      double m = 0.5 * (a.at(i, j) + a.at(j, i));
      a.at(i, j) = m;
      a.at(j, i) = m;
    }
  EighResult eig = jacobi_eigh(a);
  for (double& w : eig.eigenvalues) {
    if (w < -1e-8 * std::max(1.0, scale))
      throw_value("sqrtm_spd: input has negative eigenvalue " + std::to_string(w));
    w = w > 0 ? std::sqrt(w) : 0.0;
  }
  MatD out(n, n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (int64_t k = 0; k < n; ++k)
        s += eig.eigenvectors.at(i, k) * eig.eigenvalues[static_cast<size_t>(k)] *
             eig.eigenvectors.at(j, k);
      out.at(i, j) = s;
    }
  return out;
}

}  // namespace volflow
