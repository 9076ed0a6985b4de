/* Copyright 2026 The TAVP Authors. All Rights Reserved.

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
#ifndef TAVP_ERROR_HPP_
#define TAVP_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace tavp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or channel counts that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A mask region whose (downsampled) weight is too small to pool over.
class DegenerateMaskError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised by assert_frozen when a frozen parameter changed.
class FrozenParameterDrift : public Error {
 public:
  FrozenParameterDrift(const std::string& parameter)
      : Error("frozen parameter changed: " + parameter), parameter_(parameter) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, unsigned long long episode_seed)
      : Error(what), episode_seed_(episode_seed) {}
  unsigned long long episode_seed() const { return episode_seed_; }

 private:
  unsigned long long episode_seed_;
};

}  // namespace tavp

#endif  // TAVP_ERROR_HPP_
