#pragma once

#include <stdexcept>
#include <string>

namespace pcb_sentinel {

/// Base of every error raised by the library. `kind()` is the stable name
/// used in CLI diagnostics and HTTP error bodies.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "Error"; }
};

#define PCB_SENTINEL_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    const char* kind() const noexcept override { return #Name; }          \
  };

// imaging
PCB_SENTINEL_DEFINE_ERROR(IOError)
PCB_SENTINEL_DEFINE_ERROR(FormatError)
PCB_SENTINEL_DEFINE_ERROR(ArgumentError)
PCB_SENTINEL_DEFINE_ERROR(DegenerateRangeError)
// registration
PCB_SENTINEL_DEFINE_ERROR(InsufficientFeaturesError)
PCB_SENTINEL_DEFINE_ERROR(DegenerateConfigurationError)
PCB_SENTINEL_DEFINE_ERROR(NoConsensusError)
PCB_SENTINEL_DEFINE_ERROR(RegistrationQualityError)
// networks and losses
PCB_SENTINEL_DEFINE_ERROR(ShapeError)
PCB_SENTINEL_DEFINE_ERROR(ShapeMismatchError)
PCB_SENTINEL_DEFINE_ERROR(LayerIndexError)
// training
PCB_SENTINEL_DEFINE_ERROR(EmptyDatasetError)
PCB_SENTINEL_DEFINE_ERROR(DivergenceError)
// pipeline
PCB_SENTINEL_DEFINE_ERROR(UncalibratedModelError)
PCB_SENTINEL_DEFINE_ERROR(MissingModelError)
// evaluation
PCB_SENTINEL_DEFINE_ERROR(UndefinedMetricError)
PCB_SENTINEL_DEFINE_ERROR(SingleClassError)
PCB_SENTINEL_DEFINE_ERROR(NoPositivesError)
// datasets
PCB_SENTINEL_DEFINE_ERROR(LayoutError)
PCB_SENTINEL_DEFINE_ERROR(MaskMismatchError)

#undef PCB_SENTINEL_DEFINE_ERROR

}  // namespace pcb_sentinel
