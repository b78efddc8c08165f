#include "refit/arrayio.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "refit/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace refit {

static_assert(sizeof(float) == 4, "float must be 32-bit");

void save_array_dir(const std::string& dir, const ArrayMap& arrays,
                    const json& extra_meta, const std::string& meta_name) {
  fs::create_directories(dir);
  json meta = extra_meta.is_object() ? extra_meta : json::object();
  json shapes = json::object();
  for (const auto& [name, arr] : arrays) {
    shapes[name] = arr.shape;
    const fs::path p = fs::path(dir) / (name + ".f32");
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write array file: " + p.string());
    f.write(reinterpret_cast<const char*>(arr.data.data()),
            static_cast<std::streamsize>(arr.data.size() * sizeof(float)));
    if (!f) throw DataError("short write on array file: " + p.string());
  }
  meta["arrays"] = shapes;
  const fs::path mp = fs::path(dir) / meta_name;
  std::ofstream mf(mp, std::ios::trunc);
  if (!mf) throw DataError("cannot write metadata file: " + mp.string());
  mf << meta.dump(2) << "\n";
}

ArrayMap load_array_dir(const std::string& dir, json* extra_meta,
                        const std::string& meta_name) {
  const fs::path mp = fs::path(dir) / meta_name;
  std::ifstream mf(mp);
  if (!mf) throw DataError("cannot read metadata file: " + mp.string());
  json meta;
  try {
    mf >> meta;
  } catch (const std::exception& e) {
    throw DataError("malformed metadata file " + mp.string() + ": " + e.what());
  }
  if (!meta.contains("arrays") || !meta["arrays"].is_object())
    throw DataError("metadata file missing arrays table: " + mp.string());

  ArrayMap out;
  for (const auto& [name, shape_j] : meta["arrays"].items()) {
    ArrayF32 arr;
    arr.shape = shape_j.get<std::vector<int64_t>>();
    const fs::path p = fs::path(dir) / (name + ".f32");
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot read array file: " + p.string());
    arr.data.resize(static_cast<size_t>(arr.size()));
    f.read(reinterpret_cast<char*>(arr.data.data()),
           static_cast<std::streamsize>(arr.data.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(arr.data.size() * sizeof(float)))
      throw DataError("truncated array file: " + p.string());
    out.emplace(name, std::move(arr));
  }
  if (extra_meta) *extra_meta = meta;
  return out;
}

ArrayF32 to_f32(const std::vector<int64_t>& shape, const double* data) {
  ArrayF32 a;
  a.shape = shape;
  a.data.resize(static_cast<size_t>(a.size()));
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] = static_cast<float>(data[i]);
  return a;
}

std::vector<double> to_f64(const ArrayF32& a) {
  return std::vector<double>(a.data.begin(), a.data.end());
}

}  // namespace refit
