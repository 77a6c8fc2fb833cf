// SPDX-License-Identifier: Apache-2.0

#include "mmg/scenario_io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mmg/metrics.hpp"
#include "mmg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace mmg {

namespace {

constexpr const char* kToolVersion = "mmg 0.1.0";

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

std::vector<std::string> default_population_names(int k) {
  std::vector<std::string> names;
  for (int i = 0; i < k; ++i) names.push_back("pop" + std::to_string(i + 1));
  return names;
}

std::vector<std::string> default_mode_names(int m) {
  std::vector<std::string> names;
  names.push_back("walk");
  for (int i = 1; i < m; ++i) names.push_back("mode" + std::to_string(i));
  return names;
}

std::vector<std::string> effective_mode_names(const Scenario& s) {
  if (!s.meta.mode_names.empty()) return s.meta.mode_names;
  return default_mode_names(s.dims.n_modes);
}

std::vector<std::string> effective_population_names(const Scenario& s) {
  if (!s.meta.population_names.empty()) return s.meta.population_names;
  return default_population_names(s.dims.n_populations);
}

} // namespace

std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }
  return std::string(buf, ptr);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path() && !fs::exists(target.parent_path()))
    fail("output directory does not exist: " + target.parent_path().string());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot write file: " + tmp.string());
    out << content;
    if (!out) fail("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) fail("cannot rename " + tmp.string() + " to " + path + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// TNTP trips

std::vector<double> parse_tntp_trips(const std::string& text, int& n_out,
                                     std::vector<std::string>* warnings) {
  int declared_zones = -1;
  std::vector<std::string> tokens;
  {
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      if (auto tilde = line.find('~'); tilde != std::string::npos) line.erase(tilde);
      std::string trimmed = line;
      const auto first = trimmed.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      if (trimmed[first] == '<') {
        const auto close = trimmed.find('>', first);
        if (close == std::string::npos) fail("malformed TNTP metadata line: " + line);
        const std::string key = trimmed.substr(first + 1, close - first - 1);
        const std::string rest = trimmed.substr(close + 1);
        if (key == "NUMBER OF ZONES") {
          try {
            declared_zones = std::stoi(rest);
          } catch (...) {
            fail("malformed TNTP zone count: " + rest);
          }
          if (declared_zones <= 0) fail("TNTP zone count must be positive");
        }
        continue;
      }
      std::istringstream ts(trimmed);
      std::string tok;
      while (ts >> tok) tokens.push_back(tok);
    }
  }

  struct Entry {
    int i, j;
    double v;
  };
  std::vector<Entry> entries;
  int max_index = 0;
  int current_origin = -1;
  std::size_t pos = 0;
  auto parse_number = [&](const std::string& tok, const char* what) {
    double value = 0.0;
    const char* begin = tok.data();
    const char* end = begin + tok.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) fail(std::string("non-numeric TNTP ") + what + ": " + tok);
    return value;
  };
  while (pos < tokens.size()) {
    if (tokens[pos] == "Origin" || tokens[pos] == "ORIGIN" || tokens[pos] == "origin") {
      if (pos + 1 >= tokens.size()) fail("TNTP Origin header missing index");
      current_origin = static_cast<int>(parse_number(tokens[++pos], "origin index"));
      ++pos;
      if (current_origin <= 0) fail("TNTP origin index must be positive");
      if (declared_zones > 0 && current_origin > declared_zones)
        fail("TNTP origin index " + std::to_string(current_origin) + " exceeds declared zones");
      max_index = std::max(max_index, current_origin);
      continue;
    }
    if (current_origin < 0) fail("TNTP entry before any Origin header: " + tokens[pos]);
    // entry "j : v ;" with flexible spacing
    std::string chunk;
    while (pos < tokens.size() && tokens[pos] != "Origin" && tokens[pos] != "ORIGIN" && tokens[pos] != "origin") {
      chunk += tokens[pos++];
      if (chunk.find(';') != std::string::npos) break;
      chunk += ' ';
    }
    const auto semi = chunk.find(';');
    if (semi == std::string::npos) fail("TNTP entry missing ';': " + chunk);
    std::string body = chunk.substr(0, semi);
    const auto colon = body.find(':');
    if (colon == std::string::npos) fail("TNTP entry missing ':': " + chunk);
    std::string js = body.substr(0, colon);
    std::string vs = body.substr(colon + 1);
    auto strip = [](std::string& s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      s = a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    strip(js);
    strip(vs);
    if (js.empty() || vs.empty()) fail("malformed TNTP entry: " + chunk);
    const int j = static_cast<int>(parse_number(js, "destination index"));
    const double v = parse_number(vs, "trip value");
    if (j <= 0) fail("TNTP destination index must be positive");
    if (declared_zones > 0 && j > declared_zones)
      fail("TNTP destination index " + std::to_string(j) + " exceeds declared zones");
    if (v < 0.0 || !std::isfinite(v)) fail("TNTP trip value must be finite and >= 0");
    max_index = std::max(max_index, j);
    entries.push_back({current_origin, j, v});
  }

  const int n = declared_zones > 0 ? declared_zones : max_index;
  n_out = n;
  std::vector<double> d(static_cast<std::size_t>(n) * n, 0.0);
  for (const Entry& e : entries) {
    if (e.i == e.j) {
      if (e.v != 0.0 && warnings)
        warnings->push_back("dropped diagonal trips entry at origin " + std::to_string(e.i));
      continue;
    }
    d[static_cast<std::size_t>(e.i - 1) * n + (e.j - 1)] = e.v;
  }
  return d;
}

std::string write_tntp_trips(const std::vector<double>& d_total, int n) {
  if (d_total.size() != static_cast<std::size_t>(n) * n) fail("trips matrix has wrong size");
  double total = 0.0;
  for (double v : d_total) total += v;
  std::ostringstream out;
  out << "<NUMBER OF ZONES> " << n << "\n";
  out << "<TOTAL OD FLOW> " << format_double(total) << "\n";
  out << "<END OF METADATA>\n\n";
  for (int i = 0; i < n; ++i) {
    out << "Origin " << (i + 1) << "\n";
    int on_line = 0;
    for (int j = 0; j < n; ++j) {
      const double v = d_total[static_cast<std::size_t>(i) * n + j];
      if (v == 0.0) continue;
      out << "    " << (j + 1) << " : " << format_double(v) << ";";
      if (++on_line == 5) {
        out << "\n";
        on_line = 0;
      }
    }
    if (on_line != 0) out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// population split

std::vector<double> split_populations(const std::vector<double>& d_total, int n,
                                      const std::vector<double>& shares, std::uint64_t rng_seed,
                                      SplitMode mode) {
  const int K = static_cast<int>(shares.size());
  if (K == 0) fail("population shares are empty");
  double share_sum = 0.0;
  for (double s : shares) {
    if (s < 0.0 || !std::isfinite(s)) fail("population shares must be >= 0");
    share_sum += s;
  }
  if (std::abs(share_sum - 1.0) > 1e-9) fail("population shares must sum to 1");
  if (d_total.size() != static_cast<std::size_t>(n) * n) fail("demand matrix has wrong size");

  std::vector<double> d(static_cast<std::size_t>(n) * n * K, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double total = d_total[static_cast<std::size_t>(i) * n + j];
      if (i == j || total <= 0.0) continue;
      std::vector<double> p(shares);
      if (mode == SplitMode::Random) {
        SplitMix64 rng = substream(rng_seed, static_cast<std::uint64_t>(i) * n + j);
        double wsum = 0.0;
        for (int k = 0; k < K; ++k) {
          p[k] = shares[k] * -std::log(rng.next_unit());
          wsum += p[k];
        }
        for (int k = 0; k < K; ++k) p[k] /= wsum;
      }
      double assigned = 0.0;
      const std::size_t base = (static_cast<std::size_t>(i) * n + j) * K;
      for (int k = 0; k < K - 1; ++k) {
        d[base + k] = total * p[k];
        assigned += d[base + k];
      }
      d[base + K - 1] = total - assigned; // conservation is exact
    }
  }
  return d;
}

std::vector<double> distances_from_coordinates(const std::vector<std::pair<double, double>>& xy_km,
                                               double detour_factor) {
  const int n = static_cast<int>(xy_km.size());
  std::vector<double> d(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = xy_km[i].first - xy_km[j].first;
      const double dy = xy_km[i].second - xy_km[j].second;
      d[static_cast<std::size_t>(i) * n + j] = detour_factor * std::sqrt(dx * dx + dy * dy);
    }
  return d;
}

// ---------------------------------------------------------------------------
// scenario building

void ScenarioConfig::validate() const {
  if (modes.empty()) fail("config field 'modes': must not be empty");
  if (modes[0].name != "walk") fail("config field 'modes': first mode must be named 'walk'");
  if (modes[0].pricing.kind != PricingKind::Free) fail("config field 'modes': walk must have free pricing");
  if (modes[0].fleet.kind != FleetPolicyKind::None) fail("config field 'modes': walk must have no fleet");
  for (const ModeConfig& m : modes) {
    if (m.name.empty()) fail("config field 'modes': mode name must not be empty");
    if (!(m.speed_kmh > 0.0)) fail("config field 'modes': speed_kmh must be > 0 for mode " + m.name);
    if (m.pricing.amount < 0.0) fail("config field 'modes': price must be >= 0 for mode " + m.name);
    if (m.emission_kg_per_km < 0.0) fail("config field 'modes': emission factor must be >= 0");
  }
  if (populations.empty()) fail("config field 'populations': must not be empty");
  double share_sum = 0.0;
  for (const PopulationConfig& p : populations) {
    if (p.name.empty()) fail("config field 'populations': name must not be empty");
    if (!(p.value_of_time_usd_per_hour > 0.0))
      fail("config field 'populations': value_of_time_usd_per_hour must be > 0");
    if (p.share < 0.0 || p.share > 1.0) fail("config field 'populations': share must lie in [0,1]");
    share_sum += p.share;
  }
  if (std::abs(share_sum - 1.0) > 1e-9) fail("config field 'populations': shares must sum to 1");
  if (!(window_hours > 0.0)) fail("config field 'window_hours': must be > 0");
  if (regularization_weight < 0.0) fail("config field 'regularization_weight': must be >= 0");
  if (!(detour_factor >= 1.0)) fail("config field 'detour_factor': must be >= 1");
}

Scenario build_scenario(const ScenarioConfig& config, const std::vector<double>& d_total, int n,
                        const std::vector<double>& distances_km) {
  config.validate();
  if (d_total.size() != static_cast<std::size_t>(n) * n) fail("demand matrix has wrong size");
  if (distances_km.size() != static_cast<std::size_t>(n) * n) fail("distance matrix has wrong size");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double dist = distances_km[static_cast<std::size_t>(i) * n + j];
      if (i == j) continue;
      if (!(dist > 0.0) || !std::isfinite(dist))
        fail("missing distance for pair (" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
      const double mirrored = distances_km[static_cast<std::size_t>(j) * n + i];
      if (std::abs(dist - mirrored) > 1e-6 * std::max(1.0, dist)) fail("distance matrix must be symmetric");
    }

  const int K = static_cast<int>(config.populations.size());
  const int M1 = static_cast<int>(config.modes.size());
  Dims dims{n, K, M1};

  Scenario s;
  s.dims = dims;
  std::vector<double> shares;
  for (const auto& p : config.populations) shares.push_back(p.share);
  s.demand = split_populations(d_total, n, shares, config.rng_seed, config.split_mode);
  s.window_hours = config.window_hours;
  s.regularization_weight = config.regularization_weight;

  s.cost_model = CostModel::zeros(dims);
  s.meta.price_usd.assign(dims.size_ijm(), 0.0);
  s.meta.distance_km = distances_km;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dist = distances_km[dims.ij(i, j)];
      for (int m = 0; m < M1; ++m) {
        const ModeConfig& mode = config.modes[m];
        const double fare = mode.pricing.fare_usd(dist);
        s.meta.price_usd[dims.ijm(i, j, m)] = fare;
        const double t_nom = dist / mode.speed_kmh;
        switch (mode.congestion.kind) {
          case CongestionKind::Constant:
            s.cost_model.congestion[dims.ijm(i, j, m)] = CongestionFamily::constant(t_nom);
            break;
          case CongestionKind::Affine:
            s.cost_model.congestion[dims.ijm(i, j, m)] =
                CongestionFamily::affine(t_nom, mode.congestion.alpha);
            break;
          case CongestionKind::Bpr:
            s.cost_model.congestion[dims.ijm(i, j, m)] = CongestionFamily::bpr(
                t_nom, mode.congestion.alpha, mode.congestion.beta, mode.congestion.kappa);
            break;
        }
        for (int k = 0; k < K; ++k)
          s.cost_model.constant[dims.ijkm(i, j, k, m)] =
              fare / config.populations[k].value_of_time_usd_per_hour;
      }
    }

  s.capacities = Capacities::unbounded(dims);
  for (int m = 1; m < M1; ++m) {
    const FleetPolicy& fleet = config.modes[m].fleet;
    const double seats = fleet.seats_per_vehicle > 0.0 ? fleet.seats_per_vehicle : 1.0;
    switch (fleet.kind) {
      case FleetPolicyKind::None:
        break;
      case FleetPolicyKind::UniformTotal:
        for (int i = 0; i < n; ++i) s.capacities.available[dims.im(i, m)] = fleet.uniform_total / n * seats;
        break;
      case FleetPolicyKind::PerLocation: {
        if (fleet.per_location.size() != 1 && fleet.per_location.size() != static_cast<std::size_t>(n))
          fail("fleet per_location counts must have one entry or one per location");
        for (int i = 0; i < n; ++i) {
          const double count = fleet.per_location.size() == 1 ? fleet.per_location[0] : fleet.per_location[i];
          s.capacities.available[dims.im(i, m)] = count * seats;
        }
        break;
      }
      case FleetPolicyKind::DemandFraction: {
        if (!(fleet.demand_fraction > 0.0 && fleet.demand_fraction <= 1.0))
          fail("fleet demand_fraction must lie in (0,1]");
        for (int i = 0; i < n; ++i) {
          double departing = 0.0;
          for (int j = 0; j < n; ++j) departing += d_total[dims.ij(i, j)];
          s.capacities.available[dims.im(i, m)] = fleet.demand_fraction * departing;
        }
        break;
      }
    }
  }

  for (const auto& m : config.modes) {
    s.meta.mode_names.push_back(m.name);
    s.meta.emission_kg_per_km.push_back(m.emission_kg_per_km);
  }
  for (const auto& p : config.populations) {
    s.meta.population_names.push_back(p.name);
    s.meta.value_of_time.push_back(p.value_of_time_usd_per_hour);
  }

  s.validate();
  return s;
}

ScenarioConfig concentrate_fleets(const ScenarioConfig& config, const std::vector<double>& d_total,
                                  int n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) fail("relocation fraction must lie in (0,1]");
  std::vector<double> departing(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) departing[i] += d_total[static_cast<std::size_t>(i) * n + j];
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return departing[a] > departing[b]; });
  const int n_top = std::min(n, std::max(1, static_cast<int>(std::llround(fraction * n))));

  ScenarioConfig out = config;
  for (ModeConfig& mode : out.modes) {
    if (mode.fleet.kind != FleetPolicyKind::UniformTotal) continue;
    std::vector<double> counts(n, 0.0);
    for (int r = 0; r < n_top; ++r) counts[order[r]] = mode.fleet.uniform_total / n_top;
    mode.fleet.kind = FleetPolicyKind::PerLocation;
    mode.fleet.per_location = std::move(counts);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON scenario documents

namespace {

const json& req(const json& j, const char* field, const char* ctx) {
  auto it = j.find(field);
  if (it == j.end()) fail(std::string("scenario field '") + ctx + "." + field + "': missing");
  return *it;
}

double req_num(const json& j, const char* field, const char* ctx) {
  const json& v = req(j, field, ctx);
  if (!v.is_number()) fail(std::string("scenario field '") + ctx + "." + field + "': must be a number");
  return v.get<double>();
}

double opt_num(const json& j, const char* field, double fallback) {
  auto it = j.find(field);
  if (it == j.end()) return fallback;
  if (!it->is_number()) fail(std::string("scenario field '") + field + "': must be a number");
  return it->get<double>();
}

std::string req_str(const json& j, const char* field, const char* ctx) {
  const json& v = req(j, field, ctx);
  if (!v.is_string()) fail(std::string("scenario field '") + ctx + "." + field + "': must be a string");
  return v.get<std::string>();
}

Pricing parse_pricing(const json& j, const std::string& mode_name) {
  Pricing p;
  const std::string type = req_str(j, "type", "modes.pricing");
  if (type == "free") {
    p.kind = PricingKind::Free;
  } else if (type == "flat") {
    p.kind = PricingKind::FlatPerRide;
    p.amount = req_num(j, "usd_per_ride", "modes.pricing");
  } else if (type == "per_km") {
    p.kind = PricingKind::PerKm;
    p.amount = req_num(j, "usd_per_km", "modes.pricing");
  } else {
    fail("scenario field 'modes.pricing.type': unknown pricing '" + type + "' for mode " + mode_name);
  }
  return p;
}

CongestionSpec parse_congestion_spec(const json& j) {
  CongestionSpec c;
  const std::string type = req_str(j, "type", "modes.congestion");
  if (type == "constant") {
    c.kind = CongestionKind::Constant;
  } else if (type == "affine") {
    c.kind = CongestionKind::Affine;
    c.alpha = req_num(j, "alpha", "modes.congestion");
  } else if (type == "bpr") {
    c.kind = CongestionKind::Bpr;
    c.alpha = req_num(j, "alpha", "modes.congestion");
    c.beta = req_num(j, "beta", "modes.congestion");
    c.kappa = req_num(j, "kappa", "modes.congestion");
  } else {
    fail("scenario field 'modes.congestion.type': unknown family '" + type + "'");
  }
  return c;
}

FleetPolicy parse_fleet(const json& mode_json) {
  FleetPolicy f;
  auto it = mode_json.find("fleet");
  if (it == mode_json.end()) return f;
  const json& j = *it;
  f.seats_per_vehicle = opt_num(mode_json, "seats_per_vehicle", 1.0);
  if (j.contains("uniform_total")) {
    f.kind = FleetPolicyKind::UniformTotal;
    f.uniform_total = req_num(j, "uniform_total", "modes.fleet");
  } else if (j.contains("per_location")) {
    f.kind = FleetPolicyKind::PerLocation;
    const json& pl = j["per_location"];
    if (pl.is_number()) {
      f.per_location = {pl.get<double>()};
    } else if (pl.is_array()) {
      for (const auto& v : pl) f.per_location.push_back(v.get<double>());
    } else {
      fail("scenario field 'modes.fleet.per_location': must be a number or array");
    }
  } else if (j.contains("demand_fraction")) {
    f.kind = FleetPolicyKind::DemandFraction;
    f.demand_fraction = req_num(j, "demand_fraction", "modes.fleet");
  } else {
    fail("scenario field 'modes.fleet': expected uniform_total, per_location, or demand_fraction");
  }
  return f;
}

ScenarioConfig parse_config(const json& j) {
  ScenarioConfig c;
  c.name = j.value("name", std::string("unnamed"));
  c.window_hours = opt_num(j, "window_hours", 3.0);
  c.rng_seed = j.value("rng_seed", 0ULL);
  c.regularization_weight = opt_num(j, "regularization_weight", 0.0);
  c.detour_factor = opt_num(j, "detour_factor", 1.3);
  const std::string split = j.value("split_mode", std::string("deterministic"));
  if (split == "deterministic") {
    c.split_mode = SplitMode::Deterministic;
  } else if (split == "random") {
    c.split_mode = SplitMode::Random;
  } else {
    fail("scenario field 'split_mode': must be 'deterministic' or 'random'");
  }
  for (const json& pj : req(j, "populations", "config")) {
    PopulationConfig p;
    p.name = req_str(pj, "name", "populations");
    p.value_of_time_usd_per_hour = req_num(pj, "value_of_time_usd_per_hour", "populations");
    p.share = req_num(pj, "share", "populations");
    c.populations.push_back(std::move(p));
  }
  for (const json& mj : req(j, "modes", "config")) {
    ModeConfig m;
    m.name = req_str(mj, "name", "modes");
    m.pricing = parse_pricing(req(mj, "pricing", "modes"), m.name);
    m.speed_kmh = req_num(mj, "speed_kmh", "modes");
    m.congestion = parse_congestion_spec(req(mj, "congestion", "modes"));
    m.fleet = parse_fleet(mj);
    m.emission_kg_per_km = opt_num(mj, "emission_kg_per_km", 0.0);
    c.modes.push_back(std::move(m));
  }
  c.validate();
  return c;
}

std::vector<std::pair<double, double>> parse_coordinates_file(const std::string& text) {
  std::vector<std::pair<double, double>> xy;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (auto tilde = line.find('~'); tilde != std::string::npos) line.erase(tilde);
    std::istringstream ls(line);
    long long id;
    double x, y;
    if (!(ls >> id)) continue;
    if (!(ls >> x >> y)) fail("malformed coordinates line: " + line);
    if (id != static_cast<long long>(xy.size()) + 1) fail("coordinates file must list nodes 1..N in order");
    xy.emplace_back(x, y);
  }
  if (xy.empty()) fail("coordinates file is empty");
  return xy;
}

std::vector<double> parse_matrix(const json& j, const char* field) {
  if (!j.is_array()) fail(std::string("scenario field '") + field + "': must be an array of rows");
  const int n = static_cast<int>(j.size());
  std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    const json& row = j[i];
    if (!row.is_array() || static_cast<int>(row.size()) != n)
      fail(std::string("scenario field '") + field + "': must be square");
    for (int jj = 0; jj < n; ++jj) m[static_cast<std::size_t>(i) * n + jj] = row[jj].get<double>();
  }
  return m;
}

ScenarioBundle load_config_bundle(const json& j, const std::string& base_dir) {
  ScenarioBundle b;
  ScenarioConfig config = parse_config(j);

  const json& demand = req(j, "demand", "config");
  int n = 0;
  std::vector<double> d_total;
  if (demand.contains("trips_file")) {
    const std::string rel = req_str(demand, "trips_file", "demand");
    const std::string text = read_text_file((fs::path(base_dir) / rel).string());
    d_total = parse_tntp_trips(text, n);
  } else if (demand.contains("matrix")) {
    d_total = parse_matrix(demand["matrix"], "demand.matrix");
    n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(d_total.size()))));
  } else {
    fail("scenario field 'demand': expected trips_file or matrix");
  }
  const double scale = opt_num(demand, "scale", 1.0);
  if (!(scale > 0.0)) fail("scenario field 'demand.scale': must be > 0");
  for (double& v : d_total) v *= scale;
  for (int i = 0; i < n; ++i) d_total[static_cast<std::size_t>(i) * n + i] = 0.0;

  const json& loc = req(j, "locations", "config");
  std::vector<double> distances;
  if (loc.contains("coordinates_file")) {
    const std::string rel = req_str(loc, "coordinates_file", "locations");
    const auto xy = parse_coordinates_file(read_text_file((fs::path(base_dir) / rel).string()));
    if (static_cast<int>(xy.size()) != n) fail("coordinates count disagrees with demand zones");
    distances = distances_from_coordinates(xy, config.detour_factor);
  } else if (loc.contains("coordinates_km")) {
    std::vector<std::pair<double, double>> xy;
    for (const auto& p : loc["coordinates_km"]) xy.emplace_back(p[0].get<double>(), p[1].get<double>());
    if (static_cast<int>(xy.size()) != n) fail("coordinates count disagrees with demand zones");
    distances = distances_from_coordinates(xy, config.detour_factor);
  } else if (loc.contains("distance_matrix_km")) {
    distances = parse_matrix(loc["distance_matrix_km"], "locations.distance_matrix_km");
    if (distances.size() != static_cast<std::size_t>(n) * n)
      fail("distance matrix size disagrees with demand zones");
  } else {
    fail("scenario field 'locations': expected coordinates_file, coordinates_km, or distance_matrix_km");
  }

  b.scenario = build_scenario(config, d_total, n, distances);
  b.config = std::move(config);
  b.demand_total = std::move(d_total);
  b.distances_km = std::move(distances);
  return b;
}

int req_index(const json& j, const char* field, int upper, const char* ctx) {
  const double v = req_num(j, field, ctx);
  const int idx = static_cast<int>(v);
  if (idx < 1 || idx > upper)
    fail(std::string("scenario field '") + ctx + "." + field + "': index out of range");
  return idx - 1;
}

ScenarioBundle load_raw_bundle(const json& j) {
  ScenarioBundle b;
  Dims dims;
  dims.n_locations = static_cast<int>(req_num(j, "n_locations", "raw"));
  dims.n_populations = static_cast<int>(req_num(j, "n_populations", "raw"));
  dims.n_modes = static_cast<int>(req_num(j, "n_modes", "raw"));
  if (dims.n_locations <= 0 || dims.n_populations <= 0 || dims.n_modes <= 0)
    fail("scenario field 'n_locations/n_populations/n_modes': must be positive");

  Scenario s;
  s.dims = dims;
  s.demand.assign(dims.size_ijk(), 0.0);
  s.capacities = Capacities::unbounded(dims);
  s.cost_model = CostModel::zeros(dims);
  s.window_hours = opt_num(j, "window_hours", 1.0);
  s.regularization_weight = opt_num(j, "regularization_weight", 0.0);

  for (const json& e : req(j, "demand", "raw")) {
    const int i = req_index(e, "origin", dims.n_locations, "demand");
    const int jj = req_index(e, "destination", dims.n_locations, "demand");
    const int k = req_index(e, "population", dims.n_populations, "demand");
    s.demand[dims.ijk(i, jj, k)] = req_num(e, "value", "demand");
  }
  if (j.contains("cost_constant"))
    for (const json& e : j["cost_constant"]) {
      const int i = req_index(e, "origin", dims.n_locations, "cost_constant");
      const int jj = req_index(e, "destination", dims.n_locations, "cost_constant");
      const int k = req_index(e, "population", dims.n_populations, "cost_constant");
      const int m = req_index(e, "mode", dims.n_modes, "cost_constant");
      s.cost_model.constant[dims.ijkm(i, jj, k, m)] = req_num(e, "hours", "cost_constant");
    }
  if (j.contains("congestion"))
    for (const json& e : j["congestion"]) {
      const int i = req_index(e, "origin", dims.n_locations, "congestion");
      const int jj = req_index(e, "destination", dims.n_locations, "congestion");
      const int m = req_index(e, "mode", dims.n_modes, "congestion");
      const std::string family = req_str(e, "family", "congestion");
      if (family == "constant") {
        s.cost_model.congestion[dims.ijm(i, jj, m)] =
            CongestionFamily::constant(req_num(e, "t_nom", "congestion"));
      } else if (family == "affine") {
        s.cost_model.congestion[dims.ijm(i, jj, m)] = CongestionFamily::affine(
            req_num(e, "t_nom", "congestion"), req_num(e, "alpha", "congestion"));
      } else if (family == "bpr") {
        s.cost_model.congestion[dims.ijm(i, jj, m)] = CongestionFamily::bpr(
            req_num(e, "t_nom", "congestion"), req_num(e, "alpha", "congestion"),
            req_num(e, "beta", "congestion"), req_num(e, "kappa", "congestion"));
      } else {
        fail("scenario field 'congestion.family': unknown family '" + family + "'");
      }
    }
  if (j.contains("ride_capacity"))
    for (const json& e : j["ride_capacity"]) {
      const int i = req_index(e, "origin", dims.n_locations, "ride_capacity");
      const int jj = req_index(e, "destination", dims.n_locations, "ride_capacity");
      const int m = req_index(e, "mode", dims.n_modes, "ride_capacity");
      s.capacities.ride[dims.ijm(i, jj, m)] = req_num(e, "value", "ride_capacity");
    }
  if (j.contains("available_capacity"))
    for (const json& e : j["available_capacity"]) {
      const int i = req_index(e, "location", dims.n_locations, "available_capacity");
      const int m = req_index(e, "mode", dims.n_modes, "available_capacity");
      s.capacities.available[dims.im(i, m)] = req_num(e, "value", "available_capacity");
    }
  if (j.contains("displace_capacity"))
    for (const json& e : j["displace_capacity"]) {
      const int i = req_index(e, "location", dims.n_locations, "displace_capacity");
      const int m = req_index(e, "mode", dims.n_modes, "displace_capacity");
      s.capacities.displace[dims.im(i, m)] = req_num(e, "value", "displace_capacity");
    }
  if (j.contains("mode_names"))
    for (const auto& v : j["mode_names"]) s.meta.mode_names.push_back(v.get<std::string>());
  if (j.contains("population_names"))
    for (const auto& v : j["population_names"]) s.meta.population_names.push_back(v.get<std::string>());
  if (j.contains("value_of_time_usd_per_hour"))
    for (const auto& v : j["value_of_time_usd_per_hour"]) s.meta.value_of_time.push_back(v.get<double>());

  s.validate();
  b.scenario = std::move(s);
  return b;
}

} // namespace

ScenarioBundle scenario_bundle_from_json(const std::string& json_text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    fail(std::string("scenario document is not valid JSON: ") + e.what());
  }
  const std::string type = j.value("type", std::string("config"));
  ScenarioBundle b;
  if (type == "config") {
    b = load_config_bundle(j, base_dir);
  } else if (type == "raw") {
    b = load_raw_bundle(j);
  } else {
    fail("scenario field 'type': must be 'config' or 'raw'");
  }
  b.source_hash = fnv1a64(json_text);
  return b;
}

ScenarioBundle load_scenario_file(const std::string& path) {
  const std::string text = read_text_file(path);
  const std::string dir = fs::path(path).has_parent_path() ? fs::path(path).parent_path().string() : ".";
  ScenarioBundle b = scenario_bundle_from_json(text, dir);
  b.source_path = path;
  return b;
}

// ---------------------------------------------------------------------------
// result files

std::string write_flows_csv(const Scenario& scenario, const FlowConfiguration& flows) {
  const Dims& d = scenario.dims;
  const auto modes = effective_mode_names(scenario);
  const auto pops = effective_population_names(scenario);
  std::ostringstream out;
  out << "origin,destination,population,mode,flow\n";
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int k = 0; k < d.n_populations; ++k) {
        if (scenario.demand[d.ijk(i, j, k)] <= 0.0) continue;
        for (int m = 0; m < d.n_modes; ++m)
          out << (i + 1) << ',' << (j + 1) << ',' << pops[k] << ',' << modes[m] << ','
              << format_double(flows.x[d.ijkm(i, j, k, m)]) << "\n";
      }
    }
  return out.str();
}

FlowConfiguration read_flows_csv(const Scenario& scenario, const std::string& csv_text) {
  const Dims& d = scenario.dims;
  const auto modes = effective_mode_names(scenario);
  const auto pops = effective_population_names(scenario);
  auto index_of = [](const std::vector<std::string>& names, const std::string& name, const char* what) {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    fail(std::string("unknown ") + what + " name in flows file: " + name);
    return -1;
  };

  FlowConfiguration flows = FlowConfiguration::zeros(d);
  std::istringstream lines(csv_text);
  std::string line;
  bool header = true;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line != "origin,destination,population,mode,flow") fail("unexpected flows.csv header: " + line);
      continue;
    }
    std::array<std::string, 5> cell;
    std::size_t start = 0;
    for (int c = 0; c < 5; ++c) {
      const auto comma = line.find(',', start);
      if (c < 4 && comma == std::string::npos) fail("malformed flows.csv row: " + line);
      cell[c] = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      start = comma + 1;
    }
    const int i = std::stoi(cell[0]) - 1;
    const int j = std::stoi(cell[1]) - 1;
    if (i < 0 || i >= d.n_locations || j < 0 || j >= d.n_locations)
      fail("flows.csv location index out of range: " + line);
    const int k = index_of(pops, cell[2], "population");
    const int m = index_of(modes, cell[3], "mode");
    flows.x[d.ijkm(i, j, k, m)] = std::stod(cell[4]);
  }
  return flows;
}

namespace {

std::string write_metrics_csv(const Scenario& scenario, const MetricsReport& metrics) {
  const auto modes = effective_mode_names(scenario);
  const auto pops = effective_population_names(scenario);
  std::ostringstream out;
  out << "metric,group,value\n";
  if (metrics.split_defined)
    for (std::size_t m = 0; m < metrics.modal_split.size(); ++m)
      out << "modal_split," << modes[m] << ',' << format_double(metrics.modal_split[m]) << "\n";
  if (metrics.costs_defined) {
    out << "avg_cost_usd,total," << format_double(metrics.avg_cost_total_usd) << "\n";
    for (std::size_t k = 0; k < metrics.avg_cost_usd.size(); ++k)
      out << "avg_cost_usd," << pops[k] << ',' << format_double(metrics.avg_cost_usd[k]) << "\n";
  }
  if (metrics.revenue_defined)
    for (std::size_t m = 0; m < metrics.revenue_usd.size(); ++m)
      out << "revenue_usd," << modes[m] << ',' << format_double(metrics.revenue_usd[m]) << "\n";
  if (metrics.emissions_defined) {
    for (std::size_t m = 0; m < metrics.emissions_kg.size(); ++m)
      out << "emissions_kg," << modes[m] << ',' << format_double(metrics.emissions_kg[m]) << "\n";
    out << "emissions_kg,total," << format_double(metrics.emissions_total_kg) << "\n";
  }
  return out.str();
}

std::string write_histogram_csv(const Scenario& scenario, const MetricsReport& metrics) {
  const auto pops = effective_population_names(scenario);
  std::ostringstream out;
  out << "origin,destination,population,avg_cost_usd,weight\n";
  for (const HistogramEntry& h : metrics.histogram)
    out << (h.i + 1) << ',' << (h.j + 1) << ',' << pops[h.k] << ',' << format_double(h.avg_cost_usd)
        << ',' << format_double(h.weight) << "\n";
  return out.str();
}

char hex_digit(int v) { return v < 10 ? static_cast<char>('0' + v) : static_cast<char>('a' + v - 10); }

std::string hex64(std::uint64_t v) {
  std::string s = "0x";
  for (int shift = 60; shift >= 0; shift -= 4) s += hex_digit(static_cast<int>((v >> shift) & 0xF));
  return s;
}

} // namespace

void write_results(const Scenario& scenario, const SolveReport& report, const MetricsReport& metrics,
                   const RunManifest& manifest, const std::string& out_dir) {
  const fs::path dir(out_dir);
  if (!fs::exists(dir) || !fs::is_directory(dir)) fail("output directory does not exist: " + out_dir);

  ordered_json m;
  m["tool_version"] = manifest.tool_version.empty() ? kToolVersion : manifest.tool_version;
  m["scenario_hash"] = hex64(manifest.config_hash);
  m["seed"] = manifest.seed;
  m["solver_options"] = {{"kkt_tolerance", manifest.options.kkt_tolerance},
                         {"max_outer_iterations", manifest.options.max_outer_iterations},
                         {"barrier_initial_mu", manifest.options.barrier_initial_mu},
                         {"barrier_shrink", manifest.options.barrier_shrink},
                         {"newton_max_steps", manifest.options.newton_max_steps},
                         {"regularization_weight", manifest.options.regularization_weight}};
  m["status"] = manifest.status;
  m["potential"] = manifest.potential;
  m["kkt_residual"] = manifest.kkt_residual;
  m["barrier_stages"] = manifest.barrier_stages;

  write_text_file_atomic((dir / "flows.csv").string(), write_flows_csv(scenario, report.flows));
  write_text_file_atomic((dir / "metrics.csv").string(), write_metrics_csv(scenario, metrics));
  write_text_file_atomic((dir / "histogram.csv").string(), write_histogram_csv(scenario, metrics));
  write_text_file_atomic((dir / "manifest.json").string(), m.dump(2) + "\n");
}

} // namespace mmg
