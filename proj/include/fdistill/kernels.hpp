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

#pragma once

#include <cstddef>
#include <span>

#include "fdistill/matrix.hpp"

// Data-parallel inner loops. The top-level functions are OpenMP kernels; the
// `serial` namespace holds straightforward reference versions used by the
// tests and the benchmark. Every kernel assigns each output element to one
// worker and sums in a fixed order, so results are bitwise independent of the
// thread count and bitwise equal to the serial reference (blocked_sum excepted,
// whose reference is a plain left-to-right sum).
//
// Affine layers store weights in-major: w[k * out + o] connects input k to
// output o.
namespace fdistill::kernels {

// Worker count; honours FDISTILL_THREADS on first use.
int threads();
void set_threads(int n);

// y = x * w + bias
void affine_forward(const Matrix& x, std::span<const double> w, std::span<const double> bias,
                    Matrix& y);

// dw += x^T * dy, db += column sums of dy
void affine_weight_grad(const Matrix& x, const Matrix& dy, std::span<double> dw,
                        std::span<double> db);

// dx = dy * w^T
void affine_input_grad(const Matrix& dy, std::span<const double> w, Matrix& dx);

// Isotropic Gaussian mixture in flat form. log_norm[k] = log(weight_k) -
// dim/2 * log(2 pi var_k).
struct MixtureView {
  std::size_t dim;
  std::size_t count;
  std::span<const double> means;  // count x dim
  std::span<const double> variances;
  std::span<const double> log_norm;
};

void mixture_log_density(const MixtureView& gm, const Matrix& x, std::span<double> out);
void mixture_score(const MixtureView& gm, const Matrix& x, Matrix& out);

// Sum in fixed 4096-element blocks, blocks combined left to right.
double blocked_sum(std::span<const double> v);

namespace serial {
void affine_forward(const Matrix& x, std::span<const double> w, std::span<const double> bias,
                    Matrix& y);
void affine_weight_grad(const Matrix& x, const Matrix& dy, std::span<double> dw,
                        std::span<double> db);
void affine_input_grad(const Matrix& dy, std::span<const double> w, Matrix& dx);
void mixture_log_density(const MixtureView& gm, const Matrix& x, std::span<double> out);
void mixture_score(const MixtureView& gm, const Matrix& x, Matrix& out);
double sum(std::span<const double> v);
}  // namespace serial

}  // namespace fdistill::kernels
