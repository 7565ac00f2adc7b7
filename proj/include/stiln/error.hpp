#pragma once

#include <stdexcept>
#include <string>

namespace stiln {

// Base of every error thrown by the library. kind() is a stable machine-readable tag
// used by the CLI when it reports failures as JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define STILN_DEFINE_ERROR(Name, tag)                                    \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(tag, what) {}         \
  };

STILN_DEFINE_ERROR(InvalidShape, "invalid_shape")
STILN_DEFINE_ERROR(InvalidArgument, "invalid_argument")
STILN_DEFINE_ERROR(ContractViolation, "contract_violation")
STILN_DEFINE_ERROR(ConfigError, "config_error")
STILN_DEFINE_ERROR(NumericError, "numeric_error")
STILN_DEFINE_ERROR(LayoutError, "layout_error")
STILN_DEFINE_ERROR(TrainingDiverged, "training_diverged")
STILN_DEFINE_ERROR(IoError, "io_error")

#undef STILN_DEFINE_ERROR

}  // namespace stiln
