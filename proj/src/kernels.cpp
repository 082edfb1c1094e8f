/* Copyright 2026 The fdistill Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fdistill/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#include "fdistill/errors.hpp"

namespace fdistill::kernels {

namespace {

int g_threads = 0;

int threads_from_env() {
  if (const char* env = std::getenv("FDISTILL_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return omp_get_max_threads();
}

constexpr std::size_t kBlock = 4096;

// One row of the mixture evaluation; scratch holds `count` log terms.
double mixture_row_terms(const MixtureView& gm, const double* x, double* terms) {
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < gm.count; ++k) {
    const double* mu = gm.means.data() + k * gm.dim;
    double sq = 0.0;
    for (std::size_t j = 0; j < gm.dim; ++j) {
      const double d = x[j] - mu[j];
      sq += d * d;
    }
    terms[k] = gm.log_norm[k] - 0.5 * sq / gm.variances[k];
    peak = std::max(peak, terms[k]);
  }
  return peak;
}

double mixture_row_log_density(const MixtureView& gm, const double* x, double* terms) {
  const double peak = mixture_row_terms(gm, x, terms);
  if (!std::isfinite(peak)) return peak;
  double acc = 0.0;
  for (std::size_t k = 0; k < gm.count; ++k) acc += std::exp(terms[k] - peak);
  return peak + std::log(acc);
}

void mixture_row_score(const MixtureView& gm, const double* x, double* terms, double* out) {
  const double peak = mixture_row_terms(gm, x, terms);
  double total = 0.0;
  for (std::size_t j = 0; j < gm.dim; ++j) out[j] = 0.0;
  for (std::size_t k = 0; k < gm.count; ++k) {
    const double resp = std::exp(terms[k] - peak);
    total += resp;
    const double* mu = gm.means.data() + k * gm.dim;
    const double inv_v = 1.0 / gm.variances[k];
    for (std::size_t j = 0; j < gm.dim; ++j) out[j] += resp * (mu[j] - x[j]) * inv_v;
  }
  for (std::size_t j = 0; j < gm.dim; ++j) out[j] /= total;
}

void check_affine(const Matrix& x, std::span<const double> w, std::size_t out) {
  if (w.size() != x.cols * out) throw ShapeError("affine kernel: weight size mismatch");
}

}  // namespace

int threads() {
  if (g_threads <= 0) g_threads = threads_from_env();
  return g_threads;
}

void set_threads(int n) { g_threads = n > 0 ? n : threads_from_env(); }

void affine_forward(const Matrix& x, std::span<const double> w, std::span<const double> bias,
                    Matrix& y) {
  const std::size_t in = x.cols;
  const std::size_t out = bias.size();
  check_affine(x, w, out);
  if (y.rows != x.rows || y.cols != out) y = Matrix(x.rows, out);
  const auto rows = static_cast<std::ptrdiff_t>(x.rows);
#pragma omp parallel for schedule(static) num_threads(threads()) if (rows > 64)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* yi = y.data.data() + i * out;
    const double* xi = x.data.data() + i * in;
    for (std::size_t o = 0; o < out; ++o) yi[o] = bias[o];
    for (std::size_t k = 0; k < in; ++k) {
      const double a = xi[k];
      const double* wk = w.data() + k * out;
      for (std::size_t o = 0; o < out; ++o) yi[o] += a * wk[o];
    }
  }
}

void affine_weight_grad(const Matrix& x, const Matrix& dy, std::span<double> dw,
                        std::span<double> db) {
  const std::size_t in = x.cols;
  const std::size_t out = dy.cols;
  if (x.rows != dy.rows || dw.size() != in * out || db.size() != out) {
    throw ShapeError("affine_weight_grad: shape mismatch");
  }
  const std::size_t rows = x.rows;
  const auto ins = static_cast<std::ptrdiff_t>(in);
  // Workers own disjoint rows of dw; the batch sum runs in sample order.
#pragma omp parallel num_threads(threads()) if (rows * in * out > 32768)
  {
#pragma omp for schedule(static) nowait
    for (std::ptrdiff_t k = 0; k < ins; ++k) {
      double* dwk = dw.data() + k * out;
      for (std::size_t i = 0; i < rows; ++i) {
        const double a = x.data[i * in + k];
        const double* g = dy.data.data() + i * out;
        for (std::size_t o = 0; o < out; ++o) dwk[o] += a * g[o];
      }
    }
#pragma omp single
    for (std::size_t i = 0; i < rows; ++i) {
      const double* g = dy.data.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) db[o] += g[o];
    }
  }
}

void affine_input_grad(const Matrix& dy, std::span<const double> w, Matrix& dx) {
  const std::size_t out = dy.cols;
  if (out == 0 || w.size() % out != 0) throw ShapeError("affine_input_grad: weight size mismatch");
  const std::size_t in = w.size() / out;
  // Output-major copy so the inner loop runs over contiguous memory.
  std::vector<double> wt(in * out);
  for (std::size_t k = 0; k < in; ++k)
    for (std::size_t o = 0; o < out; ++o) wt[o * in + k] = w[k * out + o];
  if (dx.rows != dy.rows || dx.cols != in) dx = Matrix(dy.rows, in);
  const auto rows = static_cast<std::ptrdiff_t>(dy.rows);
#pragma omp parallel for schedule(static) num_threads(threads()) if (rows > 64)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* di = dx.data.data() + i * in;
    const double* gi = dy.data.data() + i * out;
    for (std::size_t k = 0; k < in; ++k) di[k] = 0.0;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = gi[o];
      const double* wo = wt.data() + o * in;
      for (std::size_t k = 0; k < in; ++k) di[k] += g * wo[k];
    }
  }
}

void mixture_log_density(const MixtureView& gm, const Matrix& x, std::span<double> out) {
  if (x.cols != gm.dim || out.size() != x.rows) throw ShapeError("mixture_log_density: shape");
  const auto rows = static_cast<std::ptrdiff_t>(x.rows);
#pragma omp parallel num_threads(threads()) if (rows * gm.count > 4096)
  {
    std::vector<double> terms(gm.count);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      out[i] = mixture_row_log_density(gm, x.data.data() + i * gm.dim, terms.data());
    }
  }
}

void mixture_score(const MixtureView& gm, const Matrix& x, Matrix& out) {
  if (x.cols != gm.dim) throw ShapeError("mixture_score: shape");
  if (!out.same_shape(x)) out = Matrix(x.rows, x.cols);
  const auto rows = static_cast<std::ptrdiff_t>(x.rows);
#pragma omp parallel num_threads(threads()) if (rows * gm.count > 4096)
  {
    std::vector<double> terms(gm.count);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      mixture_row_score(gm, x.data.data() + i * gm.dim, terms.data(),
                        out.data.data() + i * gm.dim);
    }
  }
}

double blocked_sum(std::span<const double> v) {
  const std::size_t blocks = (v.size() + kBlock - 1) / kBlock;
  std::vector<double> partial(blocks, 0.0);
  const auto nb = static_cast<std::ptrdiff_t>(blocks);
#pragma omp parallel for schedule(static) num_threads(threads()) if (blocks > 1)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
    const std::size_t hi = std::min(v.size(), lo + kBlock);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += v[i];
    partial[b] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

namespace serial {

void affine_forward(const Matrix& x, std::span<const double> w, std::span<const double> bias,
                    Matrix& y) {
  const std::size_t in = x.cols;
  const std::size_t out = bias.size();
  check_affine(x, w, out);
  y = Matrix(x.rows, out);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = bias[o];
      for (std::size_t k = 0; k < in; ++k) acc += x(i, k) * w[k * out + o];
      y(i, o) = acc;
    }
  }
}

void affine_weight_grad(const Matrix& x, const Matrix& dy, std::span<double> dw,
                        std::span<double> db) {
  const std::size_t in = x.cols;
  const std::size_t out = dy.cols;
  if (x.rows != dy.rows || dw.size() != in * out || db.size() != out) {
    throw ShapeError("affine_weight_grad: shape mismatch");
  }
  for (std::size_t k = 0; k < in; ++k) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = dw[k * out + o];
      for (std::size_t i = 0; i < x.rows; ++i) acc += x(i, k) * dy(i, o);
      dw[k * out + o] = acc;
    }
  }
  for (std::size_t o = 0; o < out; ++o) {
    double acc = db[o];
    for (std::size_t i = 0; i < x.rows; ++i) acc += dy(i, o);
    db[o] = acc;
  }
}

void affine_input_grad(const Matrix& dy, std::span<const double> w, Matrix& dx) {
  const std::size_t out = dy.cols;
  if (out == 0 || w.size() % out != 0) throw ShapeError("affine_input_grad: weight size mismatch");
  const std::size_t in = w.size() / out;
  dx = Matrix(dy.rows, in);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    for (std::size_t k = 0; k < in; ++k) {
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) acc += dy(i, o) * w[k * out + o];
      dx(i, k) = acc;
    }
  }
}

void mixture_log_density(const MixtureView& gm, const Matrix& x, std::span<double> out) {
  if (x.cols != gm.dim || out.size() != x.rows) throw ShapeError("mixture_log_density: shape");
  std::vector<double> terms(gm.count);
  for (std::size_t i = 0; i < x.rows; ++i) {
    out[i] = mixture_row_log_density(gm, x.data.data() + i * gm.dim, terms.data());
  }
}

void mixture_score(const MixtureView& gm, const Matrix& x, Matrix& out) {
  if (x.cols != gm.dim) throw ShapeError("mixture_score: shape");
  out = Matrix(x.rows, x.cols);
  std::vector<double> terms(gm.count);
  for (std::size_t i = 0; i < x.rows; ++i) {
    mixture_row_score(gm, x.data.data() + i * gm.dim, terms.data(), out.data.data() + i * gm.dim);
  }
}

double sum(std::span<const double> v) {
  double total = 0.0;
  for (double a : v) total += a;
  return total;
}

}  // namespace serial

}  // namespace fdistill::kernels
