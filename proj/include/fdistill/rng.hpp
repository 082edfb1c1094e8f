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

#include <array>
#include <cstdint>

namespace fdistill {

// Counter-based generator (Philox4x32-10). Every draw is a pure function of
// (key, counter), so parallel workers that own disjoint counters reproduce the
// serial stream exactly.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::array<std::uint32_t, 4> block(std::uint64_t counter) const;

  // Uniform on the open interval (0, 1).
  double uniform(std::uint64_t counter) const;
  double normal(std::uint64_t counter) const;

  // Independent stream keyed by an arbitrary tag.
  CounterRng substream(std::uint64_t tag) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::array<std::uint32_t, 2> key_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace fdistill
