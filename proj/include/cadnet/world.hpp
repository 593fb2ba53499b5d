#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cadnet/dataset_io.hpp"
#include "cadnet/error.hpp"
#include "cadnet/grid.hpp"
#include "cadnet/rng.hpp"

namespace cadnet {

/// Ground-surface categories a grid cell can belong to.
inline const std::vector<std::string>& zone_names() {
  static const std::vector<std::string> names{"road", "bike_lane", "sidewalk",
                                              "parking", "building", "open_land"};
  return names;
}

inline int zone_index(const std::string& name) {
  const auto& names = zone_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw config_error("unknown zone: " + name);
}

inline int zone_from_char(char c) {
  switch (c) {
    case 'R': return 0;  // road
    case 'L': return 1;  // bike_lane
    case 'S': return 2;  // sidewalk
    case 'P': return 3;  // parking
    case 'B': return 4;  // building
    case 'O': return 5;  // open_land
    default: throw config_error(std::string("unknown zone code '") + c + "'");
  }
}

struct TimeBand {
  std::string name;
  double start_hour = 0;
  double end_hour = 0;
};

struct HeadingSpec {
  std::string name;
  double weight = 1.0;
};

struct MonitoringPoint {
  std::string id;
  double latitude = 0;
  double longitude = 0;
  std::string altitude_band;
  std::vector<HeadingSpec> headings;
  std::vector<std::string> layout;  // grid_size strings of zone codes
};

/// One occurrence statement: presence probability and maximum instance count
/// for every (point, zone, band, class, heading) combination the filters
/// match. Empty filter lists match everything; later statements override
/// earlier ones.
struct OccurrenceEntry {
  std::vector<std::string> points, zones, bands, classes, headings;
  double presence = 0;
  int max_count = 1;
};

struct DetectorNoise {
  double objectness_mean = 0.9;
  double objectness_sigma = 0.004;
  double objectness_clip_lo = 0.7;
  double objectness_clip_hi = 1.0;
  double class_prob_low = 0.97;
  double class_prob_high = 0.99;
  double dropout = 0.05;
};

/// Mix of contextual anomaly flavors by the context dimension that reveals
/// them: wrong time of day, wrong monitoring point, wrong camera heading.
struct ContextualMix {
  double time = 0.4;
  double location = 0.4;
  double heading = 0.2;
};

/// A legality rule: the listed classes must never appear in the given zone.
struct TrafficRule {
  std::string id;
  std::vector<std::string> classes;
  std::string zone;
  std::string description;

  bool pedestrian_rule() const {
    return classes.size() == 1 && classes.front() == "pedestrian";
  }
};

class RuleBook {
 public:
  RuleBook() = default;
  explicit RuleBook(std::vector<TrafficRule> rules) : rules_(std::move(rules)) { validate(); }

  static RuleBook from_json(const nlohmann::json& j) {
    std::vector<TrafficRule> rules;
    for (const auto& r : j.at("rules")) {
      TrafficRule rule;
      rule.id = r.at("id").get<std::string>();
      rule.classes = r.at("classes").get<std::vector<std::string>>();
      rule.zone = r.at("zone").get<std::string>();
      rule.description = r.value("description", "");
      rules.push_back(std::move(rule));
    }
    return RuleBook(std::move(rules));
  }

  static RuleBook from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw data_error("rulebook is not valid JSON");
    return from_json(j);
  }

  const std::vector<TrafficRule>& rules() const { return rules_; }

  bool forbids(const std::string& class_name, const std::string& zone) const {
    return rule_for(class_name, zone) != nullptr;
  }

  const TrafficRule* rule_for(const std::string& class_name, const std::string& zone) const {
    for (const auto& r : rules_) {
      if (r.zone != zone) continue;
      for (const auto& c : r.classes)
        if (c == class_name) return &r;
    }
    return nullptr;
  }

 private:
  void validate() const {
    if (rules_.size() != 12)
      throw config_error("rulebook must hold exactly 12 rules, got " +
                         std::to_string(rules_.size()));
    int vehicle = 0, pedestrian = 0;
    for (const auto& r : rules_) {
      if (r.classes.empty()) throw config_error("rule " + r.id + " lists no classes");
      zone_index(r.zone);
      if (r.pedestrian_rule()) {
        ++pedestrian;
      } else {
        for (const auto& c : r.classes)
          if (c == "pedestrian")
            throw config_error("rule " + r.id + " mixes pedestrian with vehicle classes");
        ++vehicle;
      }
    }
    if (vehicle != 8 || pedestrian != 4)
      throw config_error("rulebook must hold 8 vehicle and 4 pedestrian rules, got " +
                         std::to_string(vehicle) + "/" + std::to_string(pedestrian));
  }

  std::vector<TrafficRule> rules_;
};

struct PresenceCell {
  double presence = 0;
  int max_count = 1;
};

/// A fully resolved synthetic world: monitoring points with zone layouts,
/// time bands, and a dense class occurrence table.
class ScenarioSpec {
 public:
  std::string name;
  int grid_size = 13;
  int frame_dim = 256;
  ClassVocabulary classes = ClassVocabulary::aerial_default();
  std::vector<TimeBand> bands;
  std::vector<MonitoringPoint> points;
  DetectorNoise detector;
  double normality_floor = 0.15;
  double rarity_threshold = 0.02;
  double gps_jitter = 2e-5;
  double frame_jitter = 0.05;

  static ScenarioSpec from_json(const nlohmann::json& j);
  static ScenarioSpec from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw data_error("scenario is not valid JSON");
    return from_json(j);
  }

  int point_index(const std::string& id) const {
    for (std::size_t i = 0; i < points.size(); ++i)
      if (points[i].id == id) return static_cast<int>(i);
    throw data_error("unknown monitoring point: " + id);
  }

  int heading_index(int point, const std::string& name) const {
    const auto& hs = points[static_cast<std::size_t>(point)].headings;
    for (std::size_t i = 0; i < hs.size(); ++i)
      if (hs[i].name == name) return static_cast<int>(i);
    throw data_error("unknown heading '" + name + "' at point " +
                     points[static_cast<std::size_t>(point)].id);
  }

  int band_of(double time_of_day) const {
    const double hour = time_of_day / 3600.0;
    for (std::size_t i = 0; i < bands.size(); ++i)
      if (hour >= bands[i].start_hour && hour < bands[i].end_hour) return static_cast<int>(i);
    throw data_error("time of day " + std::to_string(time_of_day) + " falls in no band");
  }

  const PresenceCell& presence(int point, int zone, int band, int cls, int heading) const {
    return table_[static_cast<std::size_t>(offset(point, zone, band, cls, heading))];
  }

  const std::vector<std::pair<int, int>>& zone_cells(int point, int zone) const {
    return cells_[static_cast<std::size_t>(point)][static_cast<std::size_t>(zone)];
  }

  int zone_at(int point, int row, int col) const {
    return zone_from_char(
        points[static_cast<std::size_t>(point)].layout[static_cast<std::size_t>(row)]
            [static_cast<std::size_t>(col)]);
  }

  struct Bounds { double lat_min, lat_max, lon_min, lon_max; };
  Bounds bounds() const {
    Bounds b{points[0].latitude, points[0].latitude, points[0].longitude, points[0].longitude};
    for (const auto& p : points) {
      b.lat_min = std::min(b.lat_min, p.latitude);
      b.lat_max = std::max(b.lat_max, p.latitude);
      b.lon_min = std::min(b.lon_min, p.longitude);
      b.lon_max = std::max(b.lon_max, p.longitude);
    }
    return b;
  }

  DatasetMeta dataset_meta() const {
    DatasetMeta meta;
    meta.grid_size = grid_size;
    meta.frame_dim = frame_dim;
    meta.classes = classes;
    return meta;
  }

  /// True when the class may legally appear somewhere else than the given
  /// (point, band): the alibi a contextual anomaly needs.
  bool alibi_exists(int point, int zone, int band, int cls) const {
    for (std::size_t p = 0; p < points.size(); ++p)
      for (std::size_t b = 0; b < bands.size(); ++b) {
        if (static_cast<int>(p) == point && static_cast<int>(b) == band) continue;
        for (std::size_t h = 0; h < points[p].headings.size(); ++h)
          if (presence(static_cast<int>(p), zone, static_cast<int>(b), cls,
                       static_cast<int>(h)).presence >= normality_floor)
            return true;
      }
    return false;
  }

  /// Validates the scenario against a rulebook: normal data must never be
  /// able to contain a rule violation.
  void check_against(const RuleBook& rulebook) const {
    for (std::size_t p = 0; p < points.size(); ++p)
      for (int z = 0; z < static_cast<int>(zone_names().size()); ++z)
        for (std::size_t b = 0; b < bands.size(); ++b)
          for (int c = 0; c < classes.size(); ++c)
            for (std::size_t h = 0; h < points[p].headings.size(); ++h)
              if (presence(static_cast<int>(p), z, static_cast<int>(b), c,
                           static_cast<int>(h)).presence > 0 &&
                  rulebook.forbids(classes.name(c), zone_names()[static_cast<std::size_t>(z)]))
                throw config_error("scenario grants presence to forbidden combination " +
                                   classes.name(c) + "@" + zone_names()[static_cast<std::size_t>(z)]);
  }

 private:
  void resolve(const std::vector<OccurrenceEntry>& entries);
  void validate() const;

  std::size_t offset(int point, int zone, int band, int cls, int heading) const {
    const int z = static_cast<int>(zone_names().size());
    const int b = static_cast<int>(bands.size());
    const int c = classes.size();
    std::size_t o = point_offsets_[static_cast<std::size_t>(point)];
    return o + ((static_cast<std::size_t>(zone) * b + band) * c + cls) *
                   points[static_cast<std::size_t>(point)].headings.size() +
           heading;
  }

  std::vector<PresenceCell> table_;
  std::vector<std::size_t> point_offsets_;
  std::vector<std::vector<std::vector<std::pair<int, int>>>> cells_;  // [point][zone]
};

inline ScenarioSpec ScenarioSpec::from_json(const nlohmann::json& j) {
  ScenarioSpec s;
  s.name = j.value("name", "unnamed");
  s.grid_size = j.value("grid_size", 13);
  s.frame_dim = j.value("frame_dim", 256);
  if (j.contains("classes"))
    s.classes = ClassVocabulary(j.at("classes").get<std::vector<std::string>>());
  for (const auto& b : j.at("time_bands")) {
    TimeBand band;
    band.name = b.at("name").get<std::string>();
    band.start_hour = b.at("start_hour").get<double>();
    band.end_hour = b.at("end_hour").get<double>();
    s.bands.push_back(std::move(band));
  }
  for (const auto& p : j.at("points")) {
    MonitoringPoint point;
    point.id = p.at("id").get<std::string>();
    point.latitude = p.at("lat").get<double>();
    point.longitude = p.at("lon").get<double>();
    point.altitude_band = p.value("altitude_band", "mid");
    for (const auto& h : p.at("headings")) {
      HeadingSpec hs;
      hs.name = h.at("name").get<std::string>();
      hs.weight = h.value("weight", 1.0);
      point.headings.push_back(std::move(hs));
    }
    point.layout = p.at("layout").get<std::vector<std::string>>();
    s.points.push_back(std::move(point));
  }
  if (j.contains("detector")) {
    const auto& d = j.at("detector");
    s.detector.objectness_mean = d.value("objectness_mean", s.detector.objectness_mean);
    s.detector.objectness_sigma = d.value("objectness_sigma", s.detector.objectness_sigma);
    s.detector.objectness_clip_lo = d.value("objectness_clip_lo", s.detector.objectness_clip_lo);
    s.detector.objectness_clip_hi = d.value("objectness_clip_hi", s.detector.objectness_clip_hi);
    s.detector.class_prob_low = d.value("class_prob_low", s.detector.class_prob_low);
    s.detector.class_prob_high = d.value("class_prob_high", s.detector.class_prob_high);
    s.detector.dropout = d.value("dropout", s.detector.dropout);
  }
  s.normality_floor = j.value("normality_floor", s.normality_floor);
  s.rarity_threshold = j.value("rarity_threshold", s.rarity_threshold);
  s.gps_jitter = j.value("gps_jitter", s.gps_jitter);
  s.frame_jitter = j.value("frame_jitter", s.frame_jitter);

  std::vector<OccurrenceEntry> entries;
  for (const auto& e : j.at("occurrence")) {
    OccurrenceEntry entry;
    entry.points = e.value("points", std::vector<std::string>{});
    entry.zones = e.value("zones", std::vector<std::string>{});
    entry.bands = e.value("bands", std::vector<std::string>{});
    entry.classes = e.value("classes", std::vector<std::string>{});
    entry.headings = e.value("headings", std::vector<std::string>{});
    entry.presence = e.at("presence").get<double>();
    entry.max_count = e.value("max_count", 1);
    entries.push_back(std::move(entry));
  }
  s.validate();
  s.resolve(entries);
  return s;
}

inline void ScenarioSpec::validate() const {
  if (grid_size <= 0 || frame_dim <= 0) throw config_error("scenario dimensions must be positive");
  if (bands.empty()) throw config_error("scenario needs at least one time band");
  if (points.empty()) throw config_error("scenario needs at least one monitoring point");
  std::vector<bool> hour_covered(24, false);
  for (const auto& b : bands) {
    if (!(b.start_hour >= 0 && b.end_hour <= 24 && b.start_hour < b.end_hour))
      throw config_error("time band " + b.name + " has invalid bounds");
    for (int h = static_cast<int>(b.start_hour); h < static_cast<int>(b.end_hour); ++h) {
      if (hour_covered[static_cast<std::size_t>(h)])
        throw config_error("time bands overlap at hour " + std::to_string(h));
      hour_covered[static_cast<std::size_t>(h)] = true;
    }
  }
  for (bool covered : hour_covered)
    if (!covered) throw config_error("time bands do not cover every hour of the day");
  for (const auto& p : points) {
    if (p.headings.empty()) throw config_error("point " + p.id + " lists no headings");
    double weight_sum = 0;
    for (const auto& h : p.headings) {
      if (h.weight <= 0) throw config_error("heading weights must be positive at " + p.id);
      weight_sum += h.weight;
    }
    if (weight_sum <= 0) throw config_error("heading weights sum to zero at " + p.id);
    if (static_cast<int>(p.layout.size()) != grid_size)
      throw config_error("layout of " + p.id + " must have " + std::to_string(grid_size) + " rows");
    for (const auto& row : p.layout) {
      if (static_cast<int>(row.size()) != grid_size)
        throw config_error("layout row of " + p.id + " has wrong length");
      for (char c : row) zone_from_char(c);
    }
  }
}

inline void ScenarioSpec::resolve(const std::vector<OccurrenceEntry>& entries) {
  const int z_count = static_cast<int>(zone_names().size());
  const int b_count = static_cast<int>(bands.size());
  const int c_count = classes.size();
  point_offsets_.clear();
  std::size_t total = 0;
  for (const auto& p : points) {
    point_offsets_.push_back(total);
    total += static_cast<std::size_t>(z_count) * b_count * c_count * p.headings.size();
  }
  table_.assign(total, PresenceCell{});

  auto matches = [](const std::vector<std::string>& filter, const std::string& value) {
    if (filter.empty()) return true;
    return std::find(filter.begin(), filter.end(), value) != filter.end();
  };

  for (const auto& e : entries) {
    if (e.presence < 0 || e.presence > 1)
      throw config_error("occurrence presence must lie in [0, 1]");
    if (e.presence > 0 && e.presence < normality_floor)
      throw config_error("occurrence presence " + std::to_string(e.presence) +
                         " is below the normality floor; use 0 or >= " +
                         std::to_string(normality_floor));
    if (e.max_count < 1) throw config_error("occurrence max_count must be >= 1");
    for (const auto& name : e.zones) zone_index(name);
    for (int p = 0; p < static_cast<int>(points.size()); ++p) {
      const auto& point = points[static_cast<std::size_t>(p)];
      if (!matches(e.points, point.id)) continue;
      for (int z = 0; z < z_count; ++z) {
        if (!matches(e.zones, zone_names()[static_cast<std::size_t>(z)])) continue;
        for (int b = 0; b < b_count; ++b) {
          if (!matches(e.bands, bands[static_cast<std::size_t>(b)].name)) continue;
          for (int c = 0; c < c_count; ++c) {
            if (!matches(e.classes, classes.name(c))) continue;
            for (int h = 0; h < static_cast<int>(point.headings.size()); ++h) {
              if (!matches(e.headings, point.headings[static_cast<std::size_t>(h)].name)) continue;
              table_[offset(p, z, b, c, h)] = PresenceCell{e.presence, e.max_count};
            }
          }
        }
      }
    }
  }

  cells_.assign(points.size(), std::vector<std::vector<std::pair<int, int>>>(
                                   static_cast<std::size_t>(z_count)));
  for (std::size_t p = 0; p < points.size(); ++p)
    for (int r = 0; r < grid_size; ++r)
      for (int c = 0; c < grid_size; ++c)
        cells_[p][static_cast<std::size_t>(zone_from_char(points[p].layout[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]))]
            .emplace_back(r, c);

  // Every configured instance count must fit into its zone everywhere that
  // combination can occur, so the documented count distribution is exact.
  for (int p = 0; p < static_cast<int>(points.size()); ++p)
    for (int z = 0; z < z_count; ++z)
      for (int b = 0; b < b_count; ++b)
        for (int c = 0; c < c_count; ++c)
          for (int h = 0; h < static_cast<int>(points[static_cast<std::size_t>(p)].headings.size()); ++h) {
            const auto& cell = presence(p, z, b, c, h);
            if (cell.presence > 0 &&
                static_cast<int>(zone_cells(p, z).size()) < cell.max_count)
              throw config_error("zone " + zone_names()[static_cast<std::size_t>(z)] + " at " +
                                 points[static_cast<std::size_t>(p)].id + " has fewer cells than max_count");
          }
}

/// Deterministic base appearance vector for a (point, heading, altitude)
/// triple: a fixed random unit vector that depends only on the scenario name
/// and the triple itself, never on a run seed.
inline std::vector<float> frame_base_vector(const ScenarioSpec& scenario, int point, int heading) {
  const auto& p = scenario.points[static_cast<std::size_t>(point)];
  std::uint64_t seed = derive_seed(0x43414e44u, scenario.name);
  seed = derive_seed(seed, p.id);
  seed = derive_seed(seed, p.headings[static_cast<std::size_t>(heading)].name);
  seed = derive_seed(seed, p.altitude_band);
  Rng rng(seed);
  std::vector<float> base(static_cast<std::size_t>(scenario.frame_dim));
  double norm_sq = 0;
  for (auto& v : base) {
    const double d = rng.normal();
    v = static_cast<float>(d);
    norm_sq += d * d;
  }
  const double norm = std::sqrt(norm_sq);
  for (auto& v : base) v = static_cast<float>(v / norm);
  return base;
}

inline std::vector<float> synth_frame_activation(const ScenarioSpec& scenario, int point,
                                                 int heading, Rng& rng) {
  std::vector<float> frame = frame_base_vector(scenario, point, heading);
  for (auto& v : frame) v = static_cast<float>(v + rng.normal() * scenario.frame_jitter);
  return frame;
}

namespace detail {

inline int pick_heading(const MonitoringPoint& point, Rng& rng) {
  double total = 0;
  for (const auto& h : point.headings) total += h.weight;
  double draw = rng.uniform() * total;
  for (std::size_t i = 0; i < point.headings.size(); ++i) {
    draw -= point.headings[i].weight;
    if (draw < 0) return static_cast<int>(i);
  }
  return static_cast<int>(point.headings.size()) - 1;
}

/// Chooses k distinct cells from a zone, uniformly, by partial shuffle.
inline std::vector<std::pair<int, int>> pick_cells(const std::vector<std::pair<int, int>>& cells,
                                                   int k, Rng& rng) {
  std::vector<std::size_t> idx(cells.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < k && !idx.empty(); ++i) {
    const std::size_t j = rng.uniform_index(idx.size());
    out.push_back(cells[idx[j]]);
    idx[j] = idx.back();
    idx.pop_back();
  }
  return out;
}

inline float detector_score(const DetectorNoise& d, Rng& rng) {
  double obj = rng.normal(d.objectness_mean, d.objectness_sigma);
  obj = std::clamp(obj, d.objectness_clip_lo, d.objectness_clip_hi);
  return static_cast<float>(obj);
}

inline RawDetection make_detection(int row, int col, int cls, int class_count,
                                   const DetectorNoise& noise, Rng& rng) {
  RawDetection det;
  det.row = row;
  det.col = col;
  det.dx = static_cast<float>(rng.uniform(0.25, 0.75));
  det.dy = static_cast<float>(rng.uniform(0.25, 0.75));
  det.width = static_cast<float>(rng.uniform(0.6, 1.2));
  det.height = static_cast<float>(rng.uniform(0.6, 1.2));
  det.objectness = detector_score(noise, rng);
  det.class_probs.assign(static_cast<std::size_t>(class_count), 0.0f);
  det.class_probs[static_cast<std::size_t>(cls)] =
      static_cast<float>(rng.uniform(noise.class_prob_low, noise.class_prob_high));
  return det;
}

}  // namespace detail

/// Draws one normal sample: picks a point, time, and heading, then rolls the
/// occurrence table and simulates the detector (noise, dropout, suppression).
inline Sample generate_normal_sample(const ScenarioSpec& scenario, std::uint64_t id, Rng& rng) {
  Sample s;
  s.id = id;
  const int p = static_cast<int>(rng.uniform_index(scenario.points.size()));
  const auto& point = scenario.points[static_cast<std::size_t>(p)];
  s.point_id = point.id;
  const int h = detail::pick_heading(point, rng);
  s.heading = point.headings[static_cast<std::size_t>(h)].name;
  s.altitude_band = point.altitude_band;
  s.context.time_of_day = rng.uniform() * 86400.0;
  const int band = scenario.band_of(s.context.time_of_day);
  s.context.latitude = point.latitude + rng.normal() * scenario.gps_jitter;
  s.context.longitude = point.longitude + rng.normal() * scenario.gps_jitter;
  s.context.frame_activation = synth_frame_activation(scenario, p, h, rng);

  std::vector<RawDetection> detections;
  const int z_count = static_cast<int>(zone_names().size());
  for (int z = 0; z < z_count; ++z) {
    const auto& cells = scenario.zone_cells(p, z);
    if (cells.empty()) continue;
    for (int c = 0; c < scenario.classes.size(); ++c) {
      const PresenceCell& occ = scenario.presence(p, z, band, c, h);
      if (occ.presence < scenario.normality_floor) continue;
      if (!rng.bernoulli(occ.presence)) continue;
      const int k = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(occ.max_count)));
      for (const auto& [row, col] : detail::pick_cells(cells, k, rng)) {
        if (rng.bernoulli(scenario.detector.dropout)) continue;  // detector miss
        detections.push_back(
            detail::make_detection(row, col, c, scenario.classes.size(), scenario.detector, rng));
      }
    }
  }
  s.grid = build_encoder_input(nms(detections, 0.5), scenario.grid_size, scenario.classes.size());
  return s;
}

inline Dataset generate_normal(const ScenarioSpec& scenario, std::size_t count,
                               std::uint64_t seed, std::uint64_t start_id = 0) {
  Dataset ds;
  ds.meta = scenario.dataset_meta();
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, "sample", start_id + i));
    ds.samples.push_back(generate_normal_sample(scenario, start_id + i, rng));
  }
  return ds;
}

/// Scans a grid for cells that violate the rulebook given a point's layout.
/// A cell counts as occupied once its score reaches the presence floor.
inline std::vector<GroundTruthCell> rule_violations(const ScenarioSpec& scenario,
                                                    const RuleBook& rulebook,
                                                    const std::string& point_id,
                                                    const DetectionGrid& grid,
                                                    double presence_floor = 0.5) {
  const int p = scenario.point_index(point_id);
  std::vector<GroundTruthCell> out;
  for (int r = 0; r < grid.size; ++r)
    for (int c = 0; c < grid.size; ++c) {
      const int z = scenario.zone_at(p, r, c);
      for (int ch = 0; ch < grid.class_count; ++ch) {
        if (grid.at(r, c, ch) < presence_floor) continue;
        if (rulebook.forbids(scenario.classes.name(ch), zone_names()[static_cast<std::size_t>(z)]))
          out.push_back({r, c, ch});
      }
    }
  return out;
}

struct InjectionResult {
  Dataset dataset;
  std::size_t skipped = 0;  // samples where no legal injection existed
  std::vector<std::string> warnings;
};

/// Injects rule-violating detections into copies of normal samples. Each
/// produced sample carries exactly one injected ground-truth cell.
inline InjectionResult inject_point_anomalies(const std::vector<Sample>& pool,
                                              const ScenarioSpec& scenario,
                                              const RuleBook& rulebook, std::size_t count,
                                              std::uint64_t seed) {
  if (pool.size() < count)
    throw config_error("point anomaly injection needs at least " + std::to_string(count) +
                       " base samples, got " + std::to_string(pool.size()));
  InjectionResult result;
  result.dataset.meta = scenario.dataset_meta();
  Rng order_rng(derive_seed(seed, "point-order"));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  order_rng.shuffle(order.begin(), order.end());

  for (std::size_t pos = 0; pos < order.size() && result.dataset.samples.size() < count; ++pos) {
    const Sample& base = pool[order[pos]];
    Rng rng(derive_seed(seed, "point-inject", base.id));
    const int p = scenario.point_index(base.point_id);
    const auto& rules = rulebook.rules();
    std::vector<std::size_t> rule_order(rules.size());
    std::iota(rule_order.begin(), rule_order.end(), std::size_t{0});
    rng.shuffle(rule_order.begin(), rule_order.end());
    bool injected = false;
    for (std::size_t ri : rule_order) {
      const TrafficRule& rule = rules[ri];
      const int zone = zone_index(rule.zone);
      const auto& cells = scenario.zone_cells(p, zone);
      if (cells.empty()) continue;
      const std::string& cls_name =
          rule.classes[rng.uniform_index(rule.classes.size())];
      if (!scenario.classes.contains(cls_name)) continue;
      const int cls = scenario.classes.index_of(cls_name);
      auto chosen = detail::pick_cells(cells, static_cast<int>(cells.size()), rng);
      for (const auto& [row, col] : chosen) {
        if (base.grid.at(row, col, cls) >= 0.5f) continue;  // already occupied
        Sample s = base;
        const float prob = static_cast<float>(
            rng.uniform(scenario.detector.class_prob_low, scenario.detector.class_prob_high));
        s.grid.at(row, col, cls) = detail::detector_score(scenario.detector, rng) * prob;
        s.kind = AnomalyKind::point;
        s.ground_truth = {{row, col, cls}};
        result.dataset.samples.push_back(std::move(s));
        injected = true;
        break;
      }
      if (injected) break;
    }
    if (!injected) {
      ++result.skipped;
      result.warnings.push_back("no feasible rule violation for sample " +
                                std::to_string(base.id));
    }
  }
  if (result.dataset.samples.size() < count)
    result.warnings.push_back("requested " + std::to_string(count) + " point anomalies, produced " +
                              std::to_string(result.dataset.samples.size()));
  return result;
}

enum class ContextFlavor { time, location, heading };

/// Candidate (class, zone) pairs that would be contextually anomalous for a
/// sample: rule-legal, rarer than the rarity threshold in the sample's own
/// context, and normal somewhere else (the alibi).
struct ContextualCandidate {
  int cls = 0;
  int zone = 0;
  ContextFlavor flavor = ContextFlavor::location;
};

inline std::vector<ContextualCandidate> contextual_candidates(const ScenarioSpec& scenario,
                                                              const RuleBook& rulebook,
                                                              const Sample& sample) {
  const int p = scenario.point_index(sample.point_id);
  const int h = scenario.heading_index(p, sample.heading);
  const int band = scenario.band_of(sample.context.time_of_day);
  const int z_count = static_cast<int>(zone_names().size());
  std::vector<ContextualCandidate> out;
  for (int cls = 0; cls < scenario.classes.size(); ++cls) {
    for (int z = 0; z < z_count; ++z) {
      if (scenario.zone_cells(p, z).empty()) continue;
      if (rulebook.forbids(scenario.classes.name(cls), zone_names()[static_cast<std::size_t>(z)]))
        continue;
      if (scenario.presence(p, z, band, cls, h).presence >= scenario.rarity_threshold) continue;
      if (!scenario.alibi_exists(p, z, band, cls)) continue;

      // Which single context dimension would reveal this combination?
      bool heading_flavor = false;
      for (int h2 = 0; h2 < static_cast<int>(scenario.points[static_cast<std::size_t>(p)].headings.size()); ++h2)
        if (h2 != h && scenario.presence(p, z, band, cls, h2).presence >= scenario.normality_floor)
          heading_flavor = true;
      bool time_flavor = false;
      for (int b2 = 0; b2 < static_cast<int>(scenario.bands.size()); ++b2)
        if (b2 != band && scenario.presence(p, z, b2, cls, h).presence >= scenario.normality_floor)
          time_flavor = true;
      bool location_flavor = false;
      for (int p2 = 0; p2 < static_cast<int>(scenario.points.size()); ++p2) {
        if (p2 == p) continue;
        for (int h2 = 0; h2 < static_cast<int>(scenario.points[static_cast<std::size_t>(p2)].headings.size()); ++h2)
          if (scenario.presence(p2, z, band, cls, h2).presence >= scenario.normality_floor)
            location_flavor = true;
      }
      ContextualCandidate cand;
      cand.cls = cls;
      cand.zone = z;
      if (heading_flavor && !time_flavor && !location_flavor)
        cand.flavor = ContextFlavor::heading;
      else if (time_flavor && !location_flavor)
        cand.flavor = ContextFlavor::time;
      else if (location_flavor && !time_flavor)
        cand.flavor = ContextFlavor::location;
      else
        continue;  // ambiguous flavor; not useful for a controlled mix
      out.push_back(cand);
    }
  }
  return out;
}

/// Injects rule-legal but contextually rare detections. The flavor mix is
/// filled by quota; location-flavored injections prefer the monitoring point
/// with the most headings so the appearance signal stays informative there.
inline InjectionResult inject_contextual_anomalies(const std::vector<Sample>& pool,
                                                   const ScenarioSpec& scenario,
                                                   const RuleBook& rulebook, std::size_t count,
                                                   std::uint64_t seed,
                                                   const ContextualMix& mix = {}) {
  if (pool.size() < count)
    throw config_error("contextual anomaly injection needs at least " + std::to_string(count) +
                       " base samples, got " + std::to_string(pool.size()));
  const double mix_sum = mix.time + mix.location + mix.heading;
  if (mix_sum <= 0) throw config_error("contextual mix must have positive mass");
  std::array<std::size_t, 3> quota{};
  quota[0] = static_cast<std::size_t>(std::llround(count * mix.time / mix_sum));
  quota[2] = static_cast<std::size_t>(std::llround(count * mix.heading / mix_sum));
  quota[1] = count - std::min(count, quota[0] + quota[2]);

  int dilution_point = 0;
  for (int p = 1; p < static_cast<int>(scenario.points.size()); ++p)
    if (scenario.points[static_cast<std::size_t>(p)].headings.size() >
        scenario.points[static_cast<std::size_t>(dilution_point)].headings.size())
      dilution_point = p;
  const std::string dilution_id = scenario.points[static_cast<std::size_t>(dilution_point)].id;

  InjectionResult result;
  result.dataset.meta = scenario.dataset_meta();
  Rng order_rng(derive_seed(seed, "ctx-order"));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  order_rng.shuffle(order.begin(), order.end());

  auto flavor_slot = [](ContextFlavor f) {
    return f == ContextFlavor::time ? 0 : (f == ContextFlavor::location ? 1 : 2);
  };

  auto inject = [&](const Sample& base, const ContextualCandidate& cand, Rng& rng) -> bool {
    const int p = scenario.point_index(base.point_id);
    auto cells = detail::pick_cells(scenario.zone_cells(p, cand.zone),
                                    static_cast<int>(scenario.zone_cells(p, cand.zone).size()), rng);
    for (const auto& [row, col] : cells) {
      if (base.grid.at(row, col, cand.cls) >= 0.5f) continue;
      Sample s = base;
      const float prob = static_cast<float>(
          rng.uniform(scenario.detector.class_prob_low, scenario.detector.class_prob_high));
      s.grid.at(row, col, cand.cls) = detail::detector_score(scenario.detector, rng) * prob;
      s.kind = AnomalyKind::contextual;
      s.ground_truth = {{row, col, cand.cls}};
      result.dataset.samples.push_back(std::move(s));
      return true;
    }
    return false;
  };

  // Pass 1 honors quotas and the dilution-point preference for location
  // anomalies; pass 2 fills whatever is left with any candidate.
  for (int pass = 0; pass < 2 && result.dataset.samples.size() < count; ++pass) {
    std::vector<std::size_t> remaining;
    for (std::size_t pos : order) {
      if (result.dataset.samples.size() >= count) break;
      const Sample& base = pool[pos];
      Rng rng(derive_seed(seed, "ctx-inject", base.id + (pass ? 1000000007ULL : 0)));
      auto candidates = contextual_candidates(scenario, rulebook, base);
      if (candidates.empty()) continue;
      bool used = false;
      if (pass == 0) {
        // Prefer the scarcest unfilled flavor this sample can provide.
        std::vector<int> slots{2, 0, 1};  // heading first: it is the rarest supply
        for (int slot : slots) {
          if (quota[static_cast<std::size_t>(slot)] == 0) continue;
          std::vector<ContextualCandidate> fitting;
          for (const auto& c : candidates)
            if (flavor_slot(c.flavor) == slot) fitting.push_back(c);
          if (fitting.empty()) continue;
          if (slot == 1 && base.point_id != dilution_id) continue;
          const auto& cand = fitting[rng.uniform_index(fitting.size())];
          if (inject(base, cand, rng)) {
            --quota[static_cast<std::size_t>(slot)];
            used = true;
          }
          break;
        }
      } else {
        const auto& cand = candidates[rng.uniform_index(candidates.size())];
        used = inject(base, cand, rng);
      }
      if (!used && pass == 1) remaining.push_back(pos);
    }
    order.clear();
    for (std::size_t pos : remaining) order.push_back(pos);
    if (pass == 0) {
      // Rebuild the full order for the fill pass, skipping consumed samples.
      std::vector<bool> taken(pool.size(), false);
      for (const auto& s : result.dataset.samples)
        for (std::size_t i = 0; i < pool.size(); ++i)
          if (pool[i].id == s.id) taken[i] = true;
      order.clear();
      std::vector<std::size_t> rebuilt(pool.size());
      std::iota(rebuilt.begin(), rebuilt.end(), std::size_t{0});
      Rng reshuffle(derive_seed(seed, "ctx-order-2"));
      reshuffle.shuffle(rebuilt.begin(), rebuilt.end());
      for (std::size_t pos : rebuilt)
        if (!taken[pos]) order.push_back(pos);
    }
  }
  if (result.dataset.samples.size() < count)
    result.warnings.push_back("requested " + std::to_string(count) +
                              " contextual anomalies, produced " +
                              std::to_string(result.dataset.samples.size()));
  return result;
}

/// Stratified split by monitoring point with largest-remainder rounding, so
/// every split sees every point in the configured proportion.
inline std::array<Dataset, 3> split_dataset(const Dataset& dataset,
                                            const std::array<double, 3>& fractions,
                                            std::uint64_t seed) {
  double sum = 0;
  for (double f : fractions) {
    if (f < 0) throw config_error("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw config_error("split fractions must sum to 1, got " + std::to_string(sum));
  if (dataset.empty()) throw data_error("cannot split an empty dataset");

  std::map<std::string, std::vector<std::size_t>> by_point;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    by_point[dataset.samples[i].point_id].push_back(i);

  std::array<Dataset, 3> out;
  for (auto& d : out) d.meta = dataset.meta;
  for (auto& [point_id, indices] : by_point) {
    Rng rng(derive_seed(seed, "split-" + point_id));
    rng.shuffle(indices.begin(), indices.end());
    const std::size_t n = indices.size();
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = fractions[s] * static_cast<double>(n);
      counts[s] = static_cast<std::size_t>(exact);
      remainders[s] = exact - static_cast<double>(counts[s]);
      assigned += counts[s];
    }
    while (assigned < n) {
      std::size_t best = 0;
      for (std::size_t s = 1; s < 3; ++s)
        if (remainders[s] > remainders[best]) best = s;
      ++counts[best];
      remainders[best] = -1;
      ++assigned;
    }
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t k = 0; k < counts[s]; ++k)
        out[s].samples.push_back(dataset.samples[indices[cursor++]]);
  }
  return out;
}

}  // namespace cadnet
