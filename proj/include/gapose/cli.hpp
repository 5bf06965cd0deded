// Copyright 2026 The gapose Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: train, eval, ablate, infer.
//
// Machine-readable results go to `out`; logs and diagnostics go to `err`.

#pragma once

#include <array>
#include <ostream>
#include <string>
#include <vector>

namespace gapose::cli {

// args excludes the program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct AblationRow {
  bool glace, agent_attention, gefb, dysample;
};

// The eight toggle patterns of the ablation table, baseline first.
const std::array<AblationRow, 8>& ablation_rows();

}  // namespace gapose::cli
