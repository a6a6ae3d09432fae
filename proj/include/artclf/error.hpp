#pragma once

#include <stdexcept>
#include <string>

namespace artclf {

// Every failure raised by the toolkit carries a stable machine-readable kind
// so the CLI can emit an error record without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define ARTCLF_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(tag, message) {}   \
  };

ARTCLF_DEFINE_ERROR(IngestionError, "ingestion")
ARTCLF_DEFINE_ERROR(ValidationError, "validation")
ARTCLF_DEFINE_ERROR(ConfigError, "config")
ARTCLF_DEFINE_ERROR(ShapeError, "shape")
ARTCLF_DEFINE_ERROR(InputError, "input")
ARTCLF_DEFINE_ERROR(SamplingError, "sampling")
ARTCLF_DEFINE_ERROR(TrainingError, "training")
ARTCLF_DEFINE_ERROR(SearchError, "search")
ARTCLF_DEFINE_ERROR(EvaluationError, "evaluation")
ARTCLF_DEFINE_ERROR(AugmentError, "augment")
ARTCLF_DEFINE_ERROR(IoError, "io")

#undef ARTCLF_DEFINE_ERROR

}  // namespace artclf
