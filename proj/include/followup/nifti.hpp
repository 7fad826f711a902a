#pragma once

#include <filesystem>

#include "followup/volume.hpp"

namespace followup {

// Reads a NIfTI-1 single-file volume (.nii or .nii.gz). Supported voxel
// datatypes: uint8, int16, float32; scl_slope/scl_inter are applied when
// set. Throws FormatError on malformed or truncated files and
// UnsupportedError on datatypes or layouts outside this subset.
Volume3D load_volume(const std::filesystem::path& path);

// Writes v as a NIfTI-1 single file, gzip-compressed when the filename
// ends in .gz. Binary volumes are stored as uint8, everything else as
// float32; load_volume inverts the write exactly for both.
void write_volume(const Volume3D& v, const std::filesystem::path& path);

}  // namespace followup
