#pragma once

#include <stdexcept>
#include <string>

namespace rodo {

// Base class for all recoverable errors raised by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define RODO_DEFINE_ERROR(NAME)                                 \
  struct NAME : Error {                                         \
    explicit NAME(const std::string& msg) : Error(msg) {}       \
  }

// lie
RODO_DEFINE_ERROR(AngleNearPi);

// point cloud
RODO_DEFINE_ERROR(CountTooLarge);
RODO_DEFINE_ERROR(KTooLarge);
RODO_DEFINE_ERROR(EmptyAfterFilter);

// autodiff
RODO_DEFINE_ERROR(ShapeMismatch);
RODO_DEFINE_ERROR(NotScalar);
RODO_DEFINE_ERROR(ArityMismatch);

// solver
RODO_DEFINE_ERROR(NotPositiveDefinite);
RODO_DEFINE_ERROR(AllFramesFixed);

// tracker
RODO_DEFINE_ERROR(WrongLength);
RODO_DEFINE_ERROR(EmptyHistory);
RODO_DEFINE_ERROR(InsufficientFrames);
RODO_DEFINE_ERROR(NonFiniteLoss);

// evaluation
RODO_DEFINE_ERROR(LengthMismatch);
RODO_DEFINE_ERROR(TrajectoryTooShort);

// baselines
RODO_DEFINE_ERROR(Degenerate);

// io
RODO_DEFINE_ERROR(IoFailure);

#undef RODO_DEFINE_ERROR

}  // namespace rodo
