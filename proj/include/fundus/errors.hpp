#pragma once

#include <stdexcept>
#include <string>

namespace fundus {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define FUNDUS_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

// dataset
FUNDUS_DEFINE_ERROR(UnknownLabelValue);
FUNDUS_DEFINE_ERROR(CupOutsideDisc);
FUNDUS_DEFINE_ERROR(MissingMask);
FUNDUS_DEFINE_ERROR(MissingLabel);
FUNDUS_DEFINE_ERROR(CorruptImage);
FUNDUS_DEFINE_ERROR(TooFewSamples);
// metrics / dataset
FUNDUS_DEFINE_ERROR(SingleClass);
FUNDUS_DEFINE_ERROR(EmptyDisc);
FUNDUS_DEFINE_ERROR(IdMismatch);
// roi
FUNDUS_DEFINE_ERROR(NoDiscFound);
// augment
FUNDUS_DEFINE_ERROR(DegenerateSample);
// network / losses
FUNDUS_DEFINE_ERROR(ConfigShapeError);
FUNDUS_DEFINE_ERROR(ShapeError);
FUNDUS_DEFINE_ERROR(MissingGroundTruth);
FUNDUS_DEFINE_ERROR(ArchitectureMismatch);
FUNDUS_DEFINE_ERROR(CheckpointError);
// postprocess
FUNDUS_DEFINE_ERROR(InsufficientBoundary);
FUNDUS_DEFINE_ERROR(DegenerateFit);
// config
FUNDUS_DEFINE_ERROR(ConfigError);

#undef FUNDUS_DEFINE_ERROR

/// Shape mismatch between two arrays that must align.
using ShapeMismatch = ShapeError;

}  // namespace fundus
