#pragma once

#include <stdexcept>
#include <string>

namespace romforge {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Three families, one per CLI exit code: bad input (2), I/O (3), numerics (4).
class InputError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};
class NumericalError : public Error {
 public:
  using Error::Error;
};

#define ROMFORGE_DEFINE_ERROR(Name, Base) \
  class Name : public Base {              \
   public:                                \
    using Base::Base;                     \
  }

ROMFORGE_DEFINE_ERROR(ConfigError, InputError);
ROMFORGE_DEFINE_ERROR(DuplicateParameterError, InputError);
ROMFORGE_DEFINE_ERROR(LookupError, InputError);
ROMFORGE_DEFINE_ERROR(SplitError, InputError);
ROMFORGE_DEFINE_ERROR(ShapeError, InputError);
ROMFORGE_DEFINE_ERROR(IndexError, InputError);
ROMFORGE_DEFINE_ERROR(EmptyInputError, InputError);

ROMFORGE_DEFINE_ERROR(WriteError, IoError);
ROMFORGE_DEFINE_ERROR(FormatError, IoError);
ROMFORGE_DEFINE_ERROR(CorruptionError, IoError);
ROMFORGE_DEFINE_ERROR(DataError, IoError);

ROMFORGE_DEFINE_ERROR(DegenerateError, NumericalError);
ROMFORGE_DEFINE_ERROR(SingularMatrixError, NumericalError);
ROMFORGE_DEFINE_ERROR(ConditioningError, NumericalError);
ROMFORGE_DEFINE_ERROR(DivergenceError, NumericalError);

#undef ROMFORGE_DEFINE_ERROR

}  // namespace romforge
