#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace refit {

// Shared on-disk array format: a directory holding one raw file per named
// array (little-endian, row-major, 32-bit float) plus a JSON metadata file
// recording every array's shape alongside arbitrary extra fields.

struct ArrayF32 {
  std::vector<int64_t> shape;
  std::vector<float> data;

  int64_t size() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

using ArrayMap = std::map<std::string, ArrayF32>;

// Writes `<dir>/<meta_name>` and one `<dir>/<name>.f32` per array. Creates
// the directory if needed.
void save_array_dir(const std::string& dir, const ArrayMap& arrays,
                    const nlohmann::json& extra_meta,
                    const std::string& meta_name = "meta.json");

// Loads every array listed in the metadata. Throws DataError naming the
// offending file on a missing/truncated array or unreadable metadata.
ArrayMap load_array_dir(const std::string& dir, nlohmann::json* extra_meta = nullptr,
                        const std::string& meta_name = "meta.json");

ArrayF32 to_f32(const std::vector<int64_t>& shape, const double* data);
std::vector<double> to_f64(const ArrayF32& a);

}  // namespace refit
