#pragma once

#include <stdexcept>
#include <string>

namespace lls {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error {
    using Error::Error;
};
struct NonFinite : Error {
    using Error::Error;
};
struct DetachedTensor : Error {
    using Error::Error;
};
struct ZeroMap : Error {
    using Error::Error;
};
struct EmptyClass : Error {
    using Error::Error;
};
struct LabelOutOfRange : Error {
    using Error::Error;
};
struct DegenerateMap : Error {
    using Error::Error;
};
struct InvalidConfig : Error {
    using Error::Error;
};
struct MissingManifest : Error {
    using Error::Error;
};
struct CorruptImage : Error {
    using Error::Error;
};
struct SplitOverlap : Error {
    using Error::Error;
};
struct InsufficientClasses : Error {
    using Error::Error;
};
struct InsufficientSamples : Error {
    using Error::Error;
};
struct DivergedLoss : Error {
    using Error::Error;
};
struct IOFailure : Error {
    using Error::Error;
};

}  // namespace lls
