#pragma once

#include <stdexcept>
#include <string>

namespace nearfield {

// Input that cannot be interpreted (bad files, invalid arguments, unknown names).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Well-formed input on which a numerical procedure cannot succeed.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define NEARFIELD_ERROR(Name, Base)                                            \
  class Name : public Base {                                                   \
  public:                                                                      \
    explicit Name(const std::string& what) : Base(#Name ": " + what) {}        \
  };

NEARFIELD_ERROR(FormatError, DataError)
NEARFIELD_ERROR(NonRectangular, DataError)
NEARFIELD_ERROR(UnknownPreset, DataError)
NEARFIELD_ERROR(UnknownLevel, DataError)
NEARFIELD_ERROR(TooCloseToWire, DataError)
NEARFIELD_ERROR(EmptyMap, DataError)
NEARFIELD_ERROR(Underdetermined, NumericalError)
NEARFIELD_ERROR(IllConditioned, NumericalError)
NEARFIELD_ERROR(NoInteriorMinimum, NumericalError)
NEARFIELD_ERROR(NoSignChange, NumericalError)
NEARFIELD_ERROR(ResonanceProximity, NumericalError)
NEARFIELD_ERROR(AmbiguousConnection, NumericalError)
NEARFIELD_ERROR(RankDeficient, NumericalError)

#undef NEARFIELD_ERROR

}  // namespace nearfield
