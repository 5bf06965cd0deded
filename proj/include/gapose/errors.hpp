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

#pragma once

#include <stdexcept>
#include <string>

namespace gapose {

// Incompatible tensor shapes or output sizes that would be non-positive.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Misuse of a graph, e.g. running backward twice without a reset.
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value. The message starts with the offending field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed, truncated or mismatching checkpoint / image file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values caught by the debug validation switch.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A training step produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gapose
