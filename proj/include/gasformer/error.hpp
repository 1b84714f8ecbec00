/*
 * Copyright (c) 2026, The Gasformer C++ Authors.
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

#include <stdexcept>
#include <string>

namespace gasformer {

// Base of every error raised by the library. The CLI maps UsageError to
// exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class DataError : public Error { public: using Error::Error; };
class InputError : public Error { public: using Error::Error; };
class ManifestError : public Error { public: using Error::Error; };
class UnsupportedOpError : public Error { public: using Error::Error; };
class UsageError : public Error { public: using Error::Error; };

// Raised when an operation produces NaN or Inf.
class NumericError : public Error { public: using Error::Error; };

}  // namespace gasformer
