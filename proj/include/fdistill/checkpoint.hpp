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

#include <cstdint>
#include <string>

#include "fdistill/distill.hpp"

// Binary layout, little-endian throughout:
//   "FDST" | u32 version | u32 length + UTF-8 config JSON
//   3 x network: u32 length + name | u32 layer count + u64 widths |
//                u64 parameter count + f64 parameters
//   3 x optimizer: u64 count + f64 m | u64 count + f64 v | u64 step
//   u64 iteration | u64 FNV-1a of every preceding byte
namespace fdistill {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n);

void save_checkpoint(const TrainState& state, const RunConfig& config, const std::string& path);

struct LoadedCheckpoint {
  RunConfig config;
  TrainState state;
};

// Networks are rebuilt from the stored config and then overwritten with the
// stored parameters, so a loaded state resumes bit for bit.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace fdistill
