// Copyright 2026 The recap Authors
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

namespace recap {

// Error taxonomy. The CLI maps each family onto a process exit code.

/// Malformed input files, bad flags, header/version mismatches. Exit code 2.
class InputError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

/// Shapes that do not line up.
class DimensionError : public std::invalid_argument {
 public:
    using std::invalid_argument::invalid_argument;
};

/// A precondition of an operation was violated by the caller. Exit code 4.
class ContractError : public std::logic_error {
 public:
    using std::logic_error::logic_error;
};

/// NaN or Inf escaped into a tensor or gradient. Exit code 3.
class NumericalError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

}  // namespace recap
