/* Copyright 2026 The DDB Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace ddb {

// Invalid or inconsistent configuration. The CLI maps this to exit status 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: argument out of range, mismatched inputs.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or missing external data while ingesting an image folder.
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or an otherwise unrecoverable optimization state.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline guard was violated (real data reaching the bias amplifier,
// gradient flowing into a frozen model, ...).
class ContractViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupt or mismatched artifact on disk.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The bias oracle could not classify too many images.
class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ddb
