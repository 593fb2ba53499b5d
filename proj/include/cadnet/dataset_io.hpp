#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/grid.hpp"

namespace cadnet {

inline constexpr int dataset_format_version = 1;

namespace detail {

inline double finite_number(const nlohmann::json& j, const char* field, std::size_t line) {
  if (!j.is_number())
    throw data_error("dataset line " + std::to_string(line) + ": field '" + field +
                     "' is not a number");
  const double v = j.get<double>();
  if (!std::isfinite(v))
    throw data_error("dataset line " + std::to_string(line) + ": field '" + field +
                     "' is not finite");
  return v;
}

inline nlohmann::json parse_line(const std::string& text, std::size_t line) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw data_error("dataset line " + std::to_string(line) + ": invalid JSON");
  return j;
}

}  // namespace detail

inline nlohmann::json sample_to_json(const Sample& sample) {
  nlohmann::json j;
  j["id"] = sample.id;
  j["point"] = sample.point_id;
  if (!sample.heading.empty()) j["heading"] = sample.heading;
  if (!sample.altitude_band.empty()) j["alt"] = sample.altitude_band;
  j["time"] = sample.context.time_of_day;
  j["lat"] = sample.context.latitude;
  j["lon"] = sample.context.longitude;
  j["frame"] = sample.context.frame_activation;
  nlohmann::json cells = nlohmann::json::array();
  const DetectionGrid& g = sample.grid;
  for (int r = 0; r < g.size; ++r)
    for (int c = 0; c < g.size; ++c)
      for (int ch = 0; ch < g.class_count; ++ch)
        if (g.at(r, c, ch) != 0.0f) cells.push_back({r, c, ch, g.at(r, c, ch)});
  j["cells"] = std::move(cells);
  if (sample.kind != AnomalyKind::none) j["kind"] = anomaly_kind_name(sample.kind);
  if (!sample.ground_truth.empty()) {
    nlohmann::json truth = nlohmann::json::array();
    for (const auto& t : sample.ground_truth) truth.push_back({t.row, t.col, t.cls});
    j["truth"] = std::move(truth);
  }
  return j;
}

inline Sample sample_from_json(const nlohmann::json& j, const DatasetMeta& meta,
                               std::size_t line) {
  Sample s;
  if (!j.contains("id") || !j.contains("point") || !j.contains("cells"))
    throw data_error("dataset line " + std::to_string(line) + ": missing required fields");
  s.id = j.at("id").get<std::uint64_t>();
  s.point_id = j.at("point").get<std::string>();
  s.heading = j.value("heading", "");
  s.altitude_band = j.value("alt", "");
  s.context.time_of_day = detail::finite_number(j.at("time"), "time", line);
  s.context.latitude = detail::finite_number(j.at("lat"), "lat", line);
  s.context.longitude = detail::finite_number(j.at("lon"), "lon", line);
  const auto& frame = j.at("frame");
  if (!frame.is_array() || static_cast<int>(frame.size()) != meta.frame_dim)
    throw data_error("dataset line " + std::to_string(line) + ": frame activation must hold " +
                     std::to_string(meta.frame_dim) + " values");
  s.context.frame_activation.reserve(frame.size());
  for (const auto& v : frame)
    s.context.frame_activation.push_back(
        static_cast<float>(detail::finite_number(v, "frame", line)));
  s.grid = DetectionGrid(meta.grid_size, meta.class_count());
  for (const auto& cell : j.at("cells")) {
    if (!cell.is_array() || cell.size() != 4)
      throw data_error("dataset line " + std::to_string(line) + ": cell entries must be [row, col, class, value]");
    const int r = cell[0].get<int>(), c = cell[1].get<int>(), ch = cell[2].get<int>();
    if (r < 0 || r >= meta.grid_size || c < 0 || c >= meta.grid_size || ch < 0 ||
        ch >= meta.class_count())
      throw data_error("dataset line " + std::to_string(line) + ": cell index out of range");
    const double v = detail::finite_number(cell[3], "cell value", line);
    if (v < 0.0 || v > 1.0)
      throw data_error("dataset line " + std::to_string(line) + ": cell value outside [0, 1]");
    s.grid.at(r, c, ch) = static_cast<float>(v);
  }
  s.kind = anomaly_kind_from_name(j.value("kind", "none"));
  if (j.contains("truth")) {
    for (const auto& t : j.at("truth")) {
      GroundTruthCell cell{t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()};
      if (cell.row < 0 || cell.row >= meta.grid_size || cell.col < 0 ||
          cell.col >= meta.grid_size || cell.cls < 0 || cell.cls >= meta.class_count())
        throw data_error("dataset line " + std::to_string(line) + ": truth cell out of range");
      s.ground_truth.push_back(cell);
    }
  }
  return s;
}

/// Streams samples from a line-delimited JSON dataset file without holding
/// the whole dataset in memory. The first line is a header describing the
/// grid shape and class vocabulary.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw io_error("cannot open dataset file: " + path);
    std::string header_line;
    if (!std::getline(in_, header_line))
      throw data_error("dataset file is empty: " + path);
    ++line_;
    nlohmann::json header = detail::parse_line(header_line, line_);
    if (!header.contains("cadnet_dataset"))
      throw data_error(path + " is not a dataset file (missing header)");
    const int version = header.at("cadnet_dataset").get<int>();
    if (version != dataset_format_version)
      throw io_error("unsupported dataset format version " + std::to_string(version) +
                     " in " + path + " (expected " + std::to_string(dataset_format_version) + ")");
    meta_.grid_size = header.at("grid_size").get<int>();
    meta_.frame_dim = header.at("frame_dim").get<int>();
    meta_.classes = ClassVocabulary(header.at("classes").get<std::vector<std::string>>());
    if (meta_.grid_size <= 0 || meta_.frame_dim <= 0)
      throw data_error("dataset header has non-positive dimensions: " + path);
  }

  const DatasetMeta& meta() const { return meta_; }

  /// Reads the next sample. Returns false at end of file.
  bool next(Sample& out) {
    std::string text;
    while (std::getline(in_, text)) {
      ++line_;
      if (text.empty()) continue;
      out = sample_from_json(detail::parse_line(text, line_), meta_, line_);
      return true;
    }
    return false;
  }

  std::size_t line() const { return line_; }

 private:
  std::string path_;
  std::ifstream in_;
  DatasetMeta meta_;
  std::size_t line_ = 0;
};

class DatasetWriter {
 public:
  DatasetWriter(const std::string& path, const DatasetMeta& meta) : out_(path) {
    if (!out_) throw io_error("cannot create dataset file: " + path);
    nlohmann::json header;
    header["cadnet_dataset"] = dataset_format_version;
    header["grid_size"] = meta.grid_size;
    header["class_count"] = meta.class_count();
    header["frame_dim"] = meta.frame_dim;
    header["classes"] = meta.classes.names();
    out_ << header.dump() << '\n';
  }

  void write(const Sample& sample) { out_ << sample_to_json(sample).dump() << '\n'; }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
};

inline void save_dataset(const std::string& path, const Dataset& dataset) {
  DatasetWriter writer(path, dataset.meta);
  for (const Sample& s : dataset.samples) writer.write(s);
  writer.close();
}

inline Dataset load_dataset(const std::string& path) {
  DatasetReader reader(path);
  Dataset dataset;
  dataset.meta = reader.meta();
  Sample s;
  while (reader.next(s)) dataset.samples.push_back(std::move(s));
  return dataset;
}

inline std::uint64_t fnv1a(const void* bytes, std::size_t count, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < count; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Content hash of a file, used by run manifests to pin datasets.
inline std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open file for hashing: " + path);
  char buffer[1 << 16];
  std::uint64_t h = 0xcbf29ce484222325ULL;
  while (in.read(buffer, sizeof buffer) || in.gcount() > 0)
    h = fnv1a(buffer, static_cast<std::size_t>(in.gcount()), h);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace cadnet
