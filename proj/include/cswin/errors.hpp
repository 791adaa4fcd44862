#pragma once

#include <stdexcept>
#include <string>

namespace cswin {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can catch one type and still report the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define CSWIN_DEFINE_ERROR(Name, Kind)                        \
  class Name : public Error {                                 \
   public:                                                    \
    using Error::Error;                                       \
    const char* kind() const noexcept override { return Kind; } \
  };

CSWIN_DEFINE_ERROR(DimensionError, "dimension error")
CSWIN_DEFINE_ERROR(ConfigError, "configuration error")
CSWIN_DEFINE_ERROR(ContractError, "contract error")
CSWIN_DEFINE_ERROR(NumericError, "numeric error")
CSWIN_DEFINE_ERROR(DataError, "data error")
CSWIN_DEFINE_ERROR(FormatError, "format error")

#undef CSWIN_DEFINE_ERROR

}  // namespace cswin
