#pragma once

#include <stdexcept>
#include <string>

namespace vsrtk {

struct CoincidentPoints : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InsufficientSatellites : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidElevation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MissingPose : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AllExcluded : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegeneratePlane : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NoRealSatellites : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyBatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OutOfInterval : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InconsistentTimestamps : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SingularSystem : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SingularInformation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotPositiveDefinite : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegenerateBox : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NoOverlap : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace vsrtk
