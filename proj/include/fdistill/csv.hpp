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

#include <fstream>
#include <string>
#include <vector>

namespace fdistill {

// CSV with a header row; numbers carry 17 significant digits.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  void row(const std::vector<double>& values);
  // Leading text cells followed by numbers.
  void row(const std::vector<std::string>& labels, const std::vector<double>& values);
  void flush();

 private:
  std::ofstream out_;
  std::size_t columns_;
};

std::string format_double(double v);

}  // namespace fdistill
