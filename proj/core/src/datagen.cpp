#include "epopr/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include "epopr/random.hpp"

namespace epopr::datagen {
namespace {

// RNG sub-streams. Keeping them separate means that changing, say, the
// sample counts does not move region geometry.
constexpr std::uint64_t kStreamGeometry = 1;
constexpr std::uint64_t kStreamDurationModel = 2;
constexpr std::uint64_t kStreamRequests = 3;
constexpr std::uint64_t kStreamSamplesBase = 1000;

// Feature layout: x1, x2 location; x3 income index; x4..x9 context.
constexpr std::size_t kIncomeFeature = 2;
constexpr double kIncomeWeight = -1.5;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void parse_fail(const std::filesystem::path& path,
                             std::size_t line, const std::string& msg) {
  throw Error(Errc::kParseError,
              path.string() + ":" + std::to_string(line) + ": " + msg);
}

double parse_double(const std::string& s, const std::filesystem::path& path,
                    std::size_t line, const std::string& col) {
  const std::string t = trim(s);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    parse_fail(path, line, "column '" + col + "' is not a number: '" + t + "'");
  }
  if (used != t.size() || !std::isfinite(v)) {
    parse_fail(path, line, "column '" + col + "' is not a number: '" + t + "'");
  }
  return v;
}

long long parse_int(const std::string& s, const std::filesystem::path& path,
                    std::size_t line, const std::string& col) {
  const std::string t = trim(s);
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(t, &used);
  } catch (const std::exception&) {
    parse_fail(path, line, "column '" + col + "' is not an integer: '" + t + "'");
  }
  if (used != t.size()) {
    parse_fail(path, line, "column '" + col + "' is not an integer: '" + t + "'");
  }
  return v;
}

struct CsvTable {
  std::map<std::string, std::size_t> columns;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
};

CsvTable read_table(const std::filesystem::path& path,
                    const std::vector<std::string>& required) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(Errc::kSchemaError, path.string() + ": empty file");
  }
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
    line.erase(0, 3);
  }
  CsvTable t;
  const auto header = split_csv_line(line);
  for (std::size_t i = 0; i < header.size(); ++i) t.columns[trim(header[i])] = i;

  std::string missing;
  for (const auto& c : required) {
    if (!t.columns.count(c)) missing += (missing.empty() ? "" : ", ") + c;
  }
  if (!missing.empty()) {
    throw Error(Errc::kSchemaError,
                path.string() + ": missing columns: " + missing);
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      parse_fail(path, lineno,
                 "expected " + std::to_string(header.size()) + " fields, got " +
                     std::to_string(cells.size()));
    }
    t.rows.emplace_back(lineno, std::move(cells));
  }
  return t;
}

std::vector<std::string> feature_columns() {
  std::vector<std::string> cols;
  for (std::size_t j = 1; j <= kFeatureDim; ++j) {
    cols.push_back("x" + std::to_string(j));
  }
  return cols;
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kCalibrate: return "cal";
    case Split::kTest: return "test";
  }
  return "?";
}

void validate(const GeneratorConfig& cfg) {
  auto fail = [](const std::string& m) { throw Error(Errc::kInvalidConfig, m); };
  if (cfg.n_regions < 2) fail("n_regions must be >= 2");
  if (cfg.n_regions < static_cast<int>(kNumGroups)) {
    fail("n_regions must be >= 3 so that every group has a region");
  }
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    if (cfg.samples_per_region_by_group[g] < 1) {
      fail("samples_per_region_by_group must be >= 1");
    }
    if (!(cfg.noise_scale_by_group[g] > 0.0)) {
      fail("noise_scale_by_group must be > 0");
    }
    if (!(cfg.request_rate_by_group[g] > 0.0)) {
      fail("request_rate_by_group must be > 0");
    }
  }
  const auto [lo, hi] = cfg.base_duration_range;
  if (!(lo > 0.0) || !(hi > lo)) {
    fail("base_duration_range must satisfy 0 < lo < hi");
  }
  if (!(cfg.city_extent_km > 0.0)) fail("city_extent_km must be > 0");
}

BaseDuration::BaseDuration(std::uint64_t seed, std::pair<double, double> range)
    : range_(range) {
  Rng rng = make_rng(seed, kStreamDurationModel);
  for (std::size_t j = 0; j < kFeatureDim; ++j) {
    weights_[j] = 1.2 * standard_normal(rng);
  }
  weights_[kIncomeFeature] = kIncomeWeight;
  bias_ = 0.3 * standard_normal(rng);
}

double BaseDuration::operator()(const std::vector<double>& features) const {
  double z = bias_;
  for (std::size_t j = 0; j < kFeatureDim; ++j) {
    z += weights_[j] * 2.0 * (features[j] - 0.5);
  }
  return range_.first + (range_.second - range_.first) * sigmoid(z);
}

std::vector<RepairRecord> Dataset::records_in(Split s) const {
  std::vector<RepairRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (split[i] == s) out.push_back(records[i]);
  }
  return out;
}

std::vector<double> Dataset::durations_for(RegionId id) const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.region_id == id) out.push_back(r.repair_duration);
  }
  return out;
}

Dataset generate(const GeneratorConfig& cfg) {
  validate(cfg);
  const auto n = static_cast<std::size_t>(cfg.n_regions);
  Dataset d;
  d.regions.resize(n);

  Rng geo = make_rng(cfg.seed, kStreamGeometry);
  std::vector<double> income(n);
  for (std::size_t i = 0; i < n; ++i) {
    Region& r = d.regions[i];
    r.id = static_cast<RegionId>(i);
    r.coord = {cfg.city_extent_km * uniform01(geo),
               cfg.city_extent_km * uniform01(geo)};
    r.features.assign(kFeatureDim, 0.0);
    r.features[0] = r.coord.x / cfg.city_extent_km;
    r.features[1] = r.coord.y / cfg.city_extent_km;
    // Income rises west to east with local variation.
    income[i] = 0.6 * r.features[0] + 0.4 * uniform01(geo);
    r.features[kIncomeFeature] = income[i];
    for (std::size_t j = 3; j < kFeatureDim; ++j) r.features[j] = uniform01(geo);
  }

  // Income terciles define the groups.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return income[a] < income[b]; });
  for (std::size_t rank = 0; rank < n; ++rank) {
    d.regions[order[rank]].group =
        static_cast<SensitiveGroup>(rank * kNumGroups / n);
  }

  Rng req = make_rng(cfg.seed, kStreamRequests);
  for (auto& r : d.regions) {
    std::poisson_distribution<std::int64_t> pois(
        cfg.request_rate_by_group[group_index(r.group)]);
    r.request_count = pois(req);
  }

  const BaseDuration g(cfg.seed, cfg.base_duration_range);
  for (const auto& r : d.regions) {
    Rng rng = make_rng(cfg.seed, kStreamSamplesBase + static_cast<std::uint64_t>(r.id));
    const auto gi = group_index(r.group);
    const double mean = g(r.features);
    const double sd = cfg.noise_scale_by_group[gi];
    for (int k = 0; k < cfg.samples_per_region_by_group[gi]; ++k) {
      double y = 0.0;
      do {
        y = mean + sd * standard_normal(rng);
      } while (!(y > 0.0));
      d.records.push_back({r.id, r.features, r.group, y});
    }
  }
  d.split.assign(d.records.size(), Split::kTrain);
  return d;
}

Dataset split(const Dataset& d, const SplitFractions& f, std::uint64_t seed) {
  if (!(f.train > 0.0) || !(f.calibrate > 0.0) || !(f.test > 0.0) ||
      std::abs(f.train + f.calibrate + f.test - 1.0) > 1e-9) {
    throw Error(Errc::kPrecondition,
                "split fractions must be positive and sum to 1");
  }
  Dataset out = d;
  out.split.assign(d.records.size(), Split::kTrain);
  for (SensitiveGroup g : kAllGroups) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.records.size(); ++i) {
      if (d.records[i].group == g) idx.push_back(i);
    }
    if (idx.empty()) continue;
    if (idx.size() < 3) {
      throw Error(Errc::kGroupTooSmall,
                  std::string(group_name(g)) + " has " +
                      std::to_string(idx.size()) + " records; need >= 3");
    }
    Rng rng = make_rng(seed, 7000 + group_index(g));
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
      std::swap(idx[i], idx[uniform_index(rng, i + 1)]);
    }
    const std::size_t n = idx.size();
    auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
    auto n_cal = static_cast<std::size_t>(std::llround(f.calibrate * n));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
    n_cal = std::clamp<std::size_t>(n_cal, 1, n - n_train - 1);
    for (std::size_t k = 0; k < n; ++k) {
      out.split[idx[k]] = k < n_train             ? Split::kTrain
                          : k < n_train + n_cal ? Split::kCalibrate
                                                : Split::kTest;
    }
  }
  return out;
}

void save_csv(const Dataset& d, const std::filesystem::path& records_csv,
              const std::filesystem::path& regions_csv) {
  {
    std::ofstream os(records_csv);
    if (!os) throw Error(Errc::kIo, "cannot write " + records_csv.string());
    os << "region_id";
    for (const auto& c : feature_columns()) os << ',' << c;
    os << ",group,repair_duration,split\n";
    for (std::size_t i = 0; i < d.records.size(); ++i) {
      const auto& r = d.records[i];
      os << r.region_id;
      for (double x : r.features) os << ',' << fmt_double(x);
      os << ',' << static_cast<int>(r.group) << ','
         << fmt_double(r.repair_duration) << ',' << split_name(d.split[i])
         << '\n';
    }
  }
  std::ofstream os(regions_csv);
  if (!os) throw Error(Errc::kIo, "cannot write " + regions_csv.string());
  os << "region_id,coord_x_km,coord_y_km,group,request_count";
  for (const auto& c : feature_columns()) os << ',' << c;
  os << '\n';
  for (const auto& r : d.regions) {
    os << r.id << ',' << fmt_double(r.coord.x) << ',' << fmt_double(r.coord.y)
       << ',' << static_cast<int>(r.group) << ',' << r.request_count;
    for (double x : r.features) os << ',' << fmt_double(x);
    os << '\n';
  }
}

Dataset load_csv(const std::filesystem::path& records_csv,
                 const std::filesystem::path& regions_csv) {
  const auto fcols = feature_columns();
  Dataset d;

  std::vector<std::string> reg_required = {"region_id", "coord_x_km",
                                           "coord_y_km", "group",
                                           "request_count"};
  reg_required.insert(reg_required.end(), fcols.begin(), fcols.end());
  const CsvTable regions = read_table(regions_csv, reg_required);
  for (const auto& [line, cells] : regions.rows) {
    auto cell = [&](const std::string& c) -> const std::string& {
      return cells[regions.columns.at(c)];
    };
    Region r;
    r.id = static_cast<RegionId>(parse_int(cell("region_id"), regions_csv, line, "region_id"));
    r.coord.x = parse_double(cell("coord_x_km"), regions_csv, line, "coord_x_km");
    r.coord.y = parse_double(cell("coord_y_km"), regions_csv, line, "coord_y_km");
    const auto g = group_from_int(parse_int(cell("group"), regions_csv, line, "group"));
    if (!g) parse_fail(regions_csv, line, "group must be 0, 1 or 2");
    r.group = *g;
    r.request_count = parse_int(cell("request_count"), regions_csv, line, "request_count");
    for (const auto& c : fcols) {
      r.features.push_back(parse_double(cell(c), regions_csv, line, c));
    }
    if (auto err = validate_region(r)) {
      parse_fail(regions_csv, line, err->what());
    }
    if (r.id != static_cast<RegionId>(d.regions.size())) {
      parse_fail(regions_csv, line, "region ids must be dense and ordered 0..N-1");
    }
    d.regions.push_back(std::move(r));
  }

  std::vector<std::string> rec_required = {"region_id"};
  rec_required.insert(rec_required.end(), fcols.begin(), fcols.end());
  rec_required.insert(rec_required.end(), {"group", "repair_duration", "split"});
  const CsvTable records = read_table(records_csv, rec_required);
  for (const auto& [line, cells] : records.rows) {
    auto cell = [&](const std::string& c) -> const std::string& {
      return cells[records.columns.at(c)];
    };
    RepairRecord r;
    const auto id = parse_int(cell("region_id"), records_csv, line, "region_id");
    if (id < 0 || id >= static_cast<long long>(d.regions.size())) {
      parse_fail(records_csv, line, "unknown region_id " + std::to_string(id));
    }
    r.region_id = static_cast<RegionId>(id);
    for (const auto& c : fcols) {
      r.features.push_back(parse_double(cell(c), records_csv, line, c));
    }
    const auto g = group_from_int(parse_int(cell("group"), records_csv, line, "group"));
    if (!g) parse_fail(records_csv, line, "group must be 0, 1 or 2");
    r.group = *g;
    r.repair_duration =
        parse_double(cell("repair_duration"), records_csv, line, "repair_duration");
    if (!(r.repair_duration > 0.0)) {
      parse_fail(records_csv, line, "repair_duration must be > 0");
    }
    const std::string s = trim(cell("split"));
    Split sp;
    if (s == "train") {
      sp = Split::kTrain;
    } else if (s == "cal") {
      sp = Split::kCalibrate;
    } else if (s == "test") {
      sp = Split::kTest;
    } else {
      parse_fail(records_csv, line, "split must be train, cal or test");
    }
    d.records.push_back(std::move(r));
    d.split.push_back(sp);
  }
  return d;
}

}  // namespace epopr::datagen
