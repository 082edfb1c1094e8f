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

#include <benchmark/benchmark.h>

#include <vector>

#include "fdistill/distill.hpp"
#include "fdistill/kernels.hpp"
#include "fdistill/rng.hpp"
#include "fdistill/teacher.hpp"

namespace {

using fdistill::Matrix;

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  const fdistill::CounterRng rng(seed);
  Matrix m(rows, cols);
  for (std::size_t k = 0; k < m.data.size(); ++k) m.data[k] = rng.normal(k);
  return m;
}

template <bool Parallel>
void BM_AffineForward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(rows, 128, 1);
  const Matrix w = random_matrix(128, 128, 2);
  const std::vector<double> b(128, 0.1);
  Matrix y(rows, 128);
  for (auto _ : state) {
    if constexpr (Parallel) fdistill::kernels::affine_forward(x, w.data, b, y);
    else fdistill::kernels::serial::affine_forward(x, w.data, b, y);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}

template <bool Parallel>
void BM_AffineWeightGrad(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(rows, 128, 3);
  const Matrix dy = random_matrix(rows, 128, 4);
  std::vector<double> dw(128 * 128);
  std::vector<double> db(128);
  for (auto _ : state) {
    if constexpr (Parallel) fdistill::kernels::affine_weight_grad(x, dy, dw, db);
    else fdistill::kernels::serial::affine_weight_grad(x, dy, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}

template <bool Parallel>
void BM_MixtureLogDensity(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix centres = random_matrix(1024, 2, 5);
  const auto gm = fdistill::IsotropicGaussianMixture::equal_weights(centres, 0.01);
  const Matrix x = random_matrix(n, 2, 6);
  std::vector<double> out(n);
  for (auto _ : state) {
    if constexpr (Parallel) fdistill::kernels::mixture_log_density(gm.view(), x, out);
    else fdistill::kernels::serial::mixture_log_density(gm.view(), x, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

template <bool Parallel>
void BM_Sum(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix v = random_matrix(n, 1, 7);
  for (auto _ : state) {
    double s = Parallel ? fdistill::kernels::blocked_sum(v.data) : fdistill::kernels::serial::sum(v.data);
    benchmark::DoNotOptimize(s);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

void BM_TrainStep(benchmark::State& state) {
  fdistill::RunConfig c;
  c.ratio_source = state.range(0) ? fdistill::RatioSource::exact_oracle : fdistill::RatioSource::discriminator;
  const fdistill::Distiller d(c);
  auto s = d.initial_state();
  for (auto _ : state) benchmark::DoNotOptimize(d.train_step(s));
}

}  // namespace

BENCHMARK(BM_AffineForward<false>)->Arg(128)->Arg(4096);
BENCHMARK(BM_AffineForward<true>)->Arg(128)->Arg(4096);
BENCHMARK(BM_AffineWeightGrad<false>)->Arg(128)->Arg(4096);
BENCHMARK(BM_AffineWeightGrad<true>)->Arg(128)->Arg(4096);
BENCHMARK(BM_MixtureLogDensity<false>)->Arg(128)->Arg(4096);
BENCHMARK(BM_MixtureLogDensity<true>)->Arg(128)->Arg(4096);
BENCHMARK(BM_Sum<false>)->Arg(1 << 20);
BENCHMARK(BM_Sum<true>)->Arg(1 << 20);
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1);

BENCHMARK_MAIN();
