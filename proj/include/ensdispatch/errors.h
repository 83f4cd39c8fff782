// Copyright 2026 The Ensemble Dispatch Authors
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

#ifndef ENSDISPATCH_ERRORS_H_
#define ENSDISPATCH_ERRORS_H_

#include <stdexcept>
#include <string>

namespace ensdispatch {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text. line() is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + message
                       : message),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Structurally invalid grid model (missing slack, bad impedances, ...).
class ModelError : public Error {
 public:
  using Error::Error;
};

// Branch set is not a spanning tree.
class RadialityError : public ModelError {
 public:
  using ModelError::ModelError;
};

// Scenario references something the grid does not have, or breaks an
// ensemble invariant.
class ScenarioError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Optimized transitions placed mass outside the support of the target matrix.
class SupportError : public Error {
 public:
  using Error::Error;
};

// A numerical subsolver hit its iteration cap.
class SolverError : public Error {
 public:
  using Error::Error;
};

// Network constraints cannot be met. bus_id() names the binding bus.
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& message, int bus_id)
      : Error(message), bus_id_(bus_id) {}
  int bus_id() const { return bus_id_; }

 private:
  int bus_id_;
};

// Dual ascent residuals grew steadily over the divergence window.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace ensdispatch

#endif  // ENSDISPATCH_ERRORS_H_
