#pragma once

#include <stdexcept>
#include <string>

namespace lf {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define LF_DEFINE_ERROR(Name)                          \
  struct Name : Error {                                \
    explicit Name(const std::string& what = #Name)     \
        : Error(what) {}                               \
  }

LF_DEFINE_ERROR(DegenerateProjection);
LF_DEFINE_ERROR(DegenerateLine);
LF_DEFINE_ERROR(ImageTooSmall);
LF_DEFINE_ERROR(SeedInvalid);
LF_DEFINE_ERROR(RegionTooSmall);
LF_DEFINE_ERROR(SizeMismatch);
LF_DEFINE_ERROR(InsufficientHistory);
LF_DEFINE_ERROR(FrameGap);
LF_DEFINE_ERROR(BothAbsent);
LF_DEFINE_ERROR(BehindCamera);
LF_DEFINE_ERROR(RayParallel);
LF_DEFINE_ERROR(TrackingLost);
LF_DEFINE_ERROR(MissingIndex);
LF_DEFINE_ERROR(UnreadableImage);
LF_DEFINE_ERROR(IoFailure);
LF_DEFINE_ERROR(ParseFailure);
LF_DEFINE_ERROR(TooFewPairs);
LF_DEFINE_ERROR(ConstraintInconsistent);

#undef LF_DEFINE_ERROR

}  // namespace lf
