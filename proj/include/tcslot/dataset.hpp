#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tcslot/synthdata.hpp"

namespace tcslot::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestFormat = "tcslot-manifest";

// ---- PGM slices ------------------------------------------------------------

/// Writes an 8-bit binary PGM; intensities in [0, 1] are rounded to 0..255.
inline void write_pgm(const fs::path& path, const embedding::Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

inline embedding::Image read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open slice " + path.string());
  std::string magic;
  is >> magic;
  if (magic != "P5") throw DataError(path.string() + ": not a binary PGM");
  auto next_int = [&]() {
    is >> std::ws;
    while (is.peek() == '#') {
      std::string line;
      std::getline(is, line);
      is >> std::ws;
    }
    int v = -1;
    is >> v;
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw DataError(path.string() + ": unsupported PGM header");
  is.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (is.gcount() != static_cast<std::streamsize>(bytes.size())) throw DataError(path.string() + ": truncated");
  embedding::Image img{h, w, std::vector<float>(bytes.size())};
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<float>(bytes[i]) / maxval;
  return img;
}

// ---- generation config -----------------------------------------------------

/// How implant slopes are drawn.
///   fig2    - 80% with tau < 0.4, the rest spread up to 1.2 (long tail)
///   uniform - tau uniform in [0, 1.2]
///   zero    - vertical implants only
struct SlopeProfile {
  std::string name = "fig2";
  double small_fraction = 0.8;
  double small_max = 0.4;
  double tail_max = 1.2;
};

struct DatasetConfig {
  int n_patients = 20;
  int depth = 24;
  int height = 64;
  int width = 64;
  int teeth_count = 12;
  int crown_begin = 8;
  int crown_end = 12;
  int implant_emerge = 15;
  int k = synth::kDefaultInterval;
  int g = 4;
  double implant_radius_px = 8.0;  // sets the heatmap sigma (radius / 3 in grid cells)
  double noise = 0.03;
  double two_gap_fraction = 0.5;   // patients with a left and a right gap
  double sparse_fraction = 0.5;
  double existing_implant_fraction = 0.3;
  SlopeProfile slopes;
  std::vector<double> split_ratios{0.8, 0.2};
  std::vector<std::string> split_names{"train", "val"};
  std::uint64_t seed = 0;

  double sigma() const { return heatmap::sigma_from_radius(implant_radius_px, g); }

  void validate() const {
    if (n_patients <= 0) throw ConfigError("dataset: n_patients must be positive");
    if (split_ratios.size() != split_names.size() || split_ratios.empty()) {
      throw ConfigError("dataset: split_ratios and split_names must have equal non-zero length");
    }
    double s = 0.0;
    for (double r : split_ratios) {
      if (r < 0.0) throw ConfigError("dataset: negative split ratio");
      s += r;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("dataset: split ratios must sum to 1");
    if (crown_begin - k < 0 || crown_end + k >= depth) {
      throw ConfigError("dataset: crown range +/- k must lie inside the volume");
    }
    if (slopes.name != "fig2" && slopes.name != "uniform" && slopes.name != "zero") {
      throw ConfigError("dataset: unknown slope profile " + slopes.name);
    }
  }
};

inline void to_json(json& j, const SlopeProfile& p) {
  j = json{{"name", p.name}, {"small_fraction", p.small_fraction}, {"small_max", p.small_max}, {"tail_max", p.tail_max}};
}
inline void from_json(const json& j, SlopeProfile& p) {
  const SlopeProfile d;
  p.name = j.value("name", d.name);
  p.small_fraction = j.value("small_fraction", d.small_fraction);
  p.small_max = j.value("small_max", d.small_max);
  p.tail_max = j.value("tail_max", d.tail_max);
}

inline void to_json(json& j, const DatasetConfig& c) {
  j = json{{"n_patients", c.n_patients},
           {"depth", c.depth},
           {"height", c.height},
           {"width", c.width},
           {"teeth_count", c.teeth_count},
           {"crown_begin", c.crown_begin},
           {"crown_end", c.crown_end},
           {"implant_emerge", c.implant_emerge},
           {"k", c.k},
           {"g", c.g},
           {"implant_radius_px", c.implant_radius_px},
           {"noise", c.noise},
           {"two_gap_fraction", c.two_gap_fraction},
           {"sparse_fraction", c.sparse_fraction},
           {"existing_implant_fraction", c.existing_implant_fraction},
           {"slopes", c.slopes},
           {"split_ratios", c.split_ratios},
           {"split_names", c.split_names},
           {"seed", c.seed}};
}

inline void from_json(const json& j, DatasetConfig& c) {
  const DatasetConfig d;
  c.n_patients = j.value("n_patients", d.n_patients);
  c.depth = j.value("depth", d.depth);
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.teeth_count = j.value("teeth_count", d.teeth_count);
  c.crown_begin = j.value("crown_begin", d.crown_begin);
  c.crown_end = j.value("crown_end", d.crown_end);
  c.implant_emerge = j.value("implant_emerge", d.implant_emerge);
  c.k = j.value("k", d.k);
  c.g = j.value("g", d.g);
  c.implant_radius_px = j.value("implant_radius_px", d.implant_radius_px);
  c.noise = j.value("noise", d.noise);
  c.two_gap_fraction = j.value("two_gap_fraction", d.two_gap_fraction);
  c.sparse_fraction = j.value("sparse_fraction", d.sparse_fraction);
  c.existing_implant_fraction = j.value("existing_implant_fraction", d.existing_implant_fraction);
  c.slopes = j.value("slopes", d.slopes);
  c.split_ratios = j.value("split_ratios", d.split_ratios);
  c.split_names = j.value("split_names", d.split_names);
  c.seed = j.value("seed", d.seed);
}

/// Draws (s1, s2) with |s1| + |s2| following the slope profile.
inline std::pair<double, double> sample_slopes(const SlopeProfile& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double tau = 0.0;
  if (p.name == "fig2") {
    tau = u(rng) < p.small_fraction ? 0.02 + (p.small_max - 0.02) * u(rng)
                                    : p.small_max + (p.tail_max - p.small_max) * u(rng);
  } else if (p.name == "uniform") {
    tau = p.tail_max * u(rng);
  }
  const double share = u(rng);
  const double sx = u(rng) < 0.5 ? -1.0 : 1.0, sy = u(rng) < 0.5 ? -1.0 : 1.0;
  return {sx * tau * share, sy * tau * (1.0 - share)};
}

/// Per-patient phantom spec; patients draw from independent seed streams.
inline synth::PhantomSpec patient_spec(const DatasetConfig& cfg, int patient_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(patient_index), 0x51a7u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  synth::PhantomSpec s;
  s.depth = cfg.depth;
  s.height = cfg.height;
  s.width = cfg.width;
  s.teeth_count = cfg.teeth_count;
  s.crown_begin = cfg.crown_begin;
  s.crown_end = cfg.crown_end;
  s.implant_emerge = cfg.implant_emerge;
  s.noise = cfg.noise;
  s.max_tau = std::max(1.5, cfg.slopes.tail_max);
  std::vector<std::string> regions;
  if (u(rng) < cfg.two_gap_fraction) {
    regions = {"left", "right"};
  } else {
    regions = {embedding::vocabulary()[static_cast<std::size_t>(u(rng) * 3) % 3]};
  }
  for (const auto& r : regions) {
    auto [s1, s2] = sample_slopes(cfg.slopes, rng);
    s.gaps.push_back({r, s1, s2});
  }
  s.sparse_region = u(rng) < cfg.sparse_fraction;
  s.existing_implant = u(rng) < cfg.existing_implant_fraction;
  s.seed = rng();
  return s;
}

// ---- manifest --------------------------------------------------------------

struct ImplantRecord {
  std::string condition;
  double s1 = 0.0, s2 = 0.0, tau = 0.0;
  int crown_begin = 0, crown_end = 0;
  double z_root = 0.0;
  std::vector<geometry::CenterPoint3D> centerline;
  bool operator==(const ImplantRecord& o) const {
    if (!(condition == o.condition && s1 == o.s1 && s2 == o.s2 && tau == o.tau && crown_begin == o.crown_begin &&
          crown_end == o.crown_end && z_root == o.z_root && centerline.size() == o.centerline.size())) {
      return false;
    }
    for (std::size_t i = 0; i < centerline.size(); ++i) {
      const auto &a = centerline[i], &b = o.centerline[i];
      if (a.x != b.x || a.y != b.y || a.z != b.z) return false;
    }
    return true;
  }
};

struct PatientRecord {
  std::string id;
  std::string split;
  std::vector<std::string> slices;  // relative to the manifest directory
  std::vector<ImplantRecord> implants;
  bool operator==(const PatientRecord&) const = default;
};

struct TripletRecord {
  std::string patient;
  int t = 0;
  int k = 0;
  std::string condition;
  int implant = 0;
  double x = 0.0, y = 0.0;
  double tau = 0.0;
  std::string split;
  bool operator==(const TripletRecord&) const = default;
};

struct Manifest {
  int version = kManifestVersion;
  int height = 0, width = 0, depth = 0;
  int k = 0, g = 4;
  double sigma = 1.0;
  DatasetConfig config;
  std::vector<PatientRecord> patients;
  std::vector<TripletRecord> triplets;
  fs::path root;  // directory containing the manifest; not serialized

  const PatientRecord& patient(const std::string& id) const {
    for (const auto& p : patients) {
      if (p.id == id) return p;
    }
    throw DataError("manifest: unknown patient " + id);
  }

  std::vector<TripletRecord> split(const std::string& name) const {
    std::vector<TripletRecord> out;
    for (const auto& t : triplets) {
      if (t.split == name) out.push_back(t);
    }
    return out;
  }
};

inline json manifest_to_json(const Manifest& m) {
  json patients = json::array();
  for (const auto& p : m.patients) {
    json implants = json::array();
    for (const auto& a : p.implants) {
      json cl = json::array();
      for (const auto& c : a.centerline) cl.push_back({c.x, c.y, c.z});
      implants.push_back({{"condition", a.condition},
                          {"s1", a.s1},
                          {"s2", a.s2},
                          {"tau", a.tau},
                          {"crown_begin", a.crown_begin},
                          {"crown_end", a.crown_end},
                          {"z_root", a.z_root},
                          {"centerline", cl}});
    }
    patients.push_back({{"id", p.id}, {"split", p.split}, {"slices", p.slices}, {"implants", implants}});
  }
  json triplets = json::array();
  for (const auto& t : m.triplets) {
    triplets.push_back({{"patient", t.patient},
                        {"t", t.t},
                        {"k", t.k},
                        {"condition", t.condition},
                        {"implant", t.implant},
                        {"target", {t.x, t.y}},
                        {"tau", t.tau},
                        {"split", t.split}});
  }
  return json{{"format", kManifestFormat},
              {"version", m.version},
              {"image", {{"height", m.height}, {"width", m.width}}},
              {"depth", m.depth},
              {"k", m.k},
              {"g", m.g},
              {"sigma", m.sigma},
              {"config", m.config},
              {"patients", patients},
              {"triplets", triplets}};
}

inline Manifest manifest_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kManifestFormat) throw DataError("manifest: wrong format tag");
    Manifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion) {
      throw DataError("manifest: unsupported version " + std::to_string(m.version));
    }
    m.height = j.at("image").at("height").get<int>();
    m.width = j.at("image").at("width").get<int>();
    m.depth = j.at("depth").get<int>();
    m.k = j.at("k").get<int>();
    m.g = j.at("g").get<int>();
    m.sigma = j.at("sigma").get<double>();
    m.config = j.at("config").get<DatasetConfig>();
    for (const auto& pj : j.at("patients")) {
      PatientRecord p;
      p.id = pj.at("id").get<std::string>();
      p.split = pj.at("split").get<std::string>();
      p.slices = pj.at("slices").get<std::vector<std::string>>();
      for (const auto& aj : pj.at("implants")) {
        ImplantRecord a;
        a.condition = aj.at("condition").get<std::string>();
        a.s1 = aj.at("s1").get<double>();
        a.s2 = aj.at("s2").get<double>();
        a.tau = aj.at("tau").get<double>();
        a.crown_begin = aj.at("crown_begin").get<int>();
        a.crown_end = aj.at("crown_end").get<int>();
        a.z_root = aj.at("z_root").get<double>();
        for (const auto& c : aj.at("centerline")) {
          a.centerline.push_back({c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()});
        }
        p.implants.push_back(std::move(a));
      }
      m.patients.push_back(std::move(p));
    }
    for (const auto& tj : j.at("triplets")) {
      TripletRecord t;
      t.patient = tj.at("patient").get<std::string>();
      t.t = tj.at("t").get<int>();
      t.k = tj.at("k").get<int>();
      t.condition = tj.at("condition").get<std::string>();
      t.implant = tj.at("implant").get<int>();
      t.x = tj.at("target").at(0).get<double>();
      t.y = tj.at("target").at(1).get<double>();
      t.tau = tj.at("tau").get<double>();
      t.split = tj.at("split").get<std::string>();
      m.triplets.push_back(std::move(t));
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: malformed (") + e.what() + ")");
  }
}

inline void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  os << manifest_to_json(m).dump(2) << "\n";
  if (!os) throw DataError("failed writing manifest " + path.string());
}

inline Manifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  Manifest m = manifest_from_json(j);
  m.root = path.parent_path();
  return m;
}

/// Patient-disjoint split assignment: shuffled patient order, contiguous blocks
/// sized by rounding the cumulative ratios.
inline std::vector<std::string> assign_splits(const DatasetConfig& cfg) {
  std::vector<int> order(static_cast<std::size_t>(cfg.n_patients));
  for (int i = 0; i < cfg.n_patients; ++i) order[i] = i;
  std::mt19937_64 rng(cfg.seed ^ 0x5b117ULL);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::string> split(static_cast<std::size_t>(cfg.n_patients));
  double cum = 0.0;
  int begin = 0;
  for (std::size_t s = 0; s < cfg.split_ratios.size(); ++s) {
    cum += cfg.split_ratios[s];
    const int end = s + 1 == cfg.split_ratios.size() ? cfg.n_patients
                                                      : static_cast<int>(std::lround(cum * cfg.n_patients));
    for (int i = begin; i < end; ++i) split[order[i]] = cfg.split_names[s];
    begin = std::max(begin, end);
  }
  return split;
}

inline std::string patient_id(int index) {
  std::ostringstream os;
  os << "p" << std::setw(3) << std::setfill('0') << index;
  return os.str();
}

/// Generates every patient volume, writes its slices and the manifest into `out_dir`.
inline Manifest build_dataset(const fs::path& out_dir, const DatasetConfig& cfg) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "slices", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "slices").string() + ": " + ec.message());

  Manifest m;
  m.height = cfg.height;
  m.width = cfg.width;
  m.depth = cfg.depth;
  m.k = cfg.k;
  m.g = cfg.g;
  m.sigma = cfg.sigma();
  m.config = cfg;
  m.root = out_dir;
  const auto splits = assign_splits(cfg);

  for (int i = 0; i < cfg.n_patients; ++i) {
    const auto spec = patient_spec(cfg, i);
    const auto ph = synth::generate_volume(spec);
    PatientRecord p;
    p.id = patient_id(i);
    p.split = splits[i];
    fs::create_directories(out_dir / "slices" / p.id, ec);
    if (ec) throw DataError("cannot create slice directory: " + ec.message());
    for (int z = 0; z < cfg.depth; ++z) {
      std::ostringstream name;
      name << "slices/" << p.id << "/z" << std::setw(3) << std::setfill('0') << z << ".pgm";
      write_pgm(out_dir / name.str(), ph.volume.slice(z));
      p.slices.push_back(name.str());
    }
    for (std::size_t a = 0; a < ph.implants.size(); ++a) {
      const auto& ann = ph.implants[a];
      p.implants.push_back({ann.condition, ann.s1, ann.s2, ann.tau, ann.crown_begin, ann.crown_end, ann.z_root,
                            ann.centerline});
      for (int t = ann.crown_begin; t <= ann.crown_end; ++t) {
        const auto c = ann.position_at(t);
        m.triplets.push_back({p.id, t, cfg.k, ann.condition, static_cast<int>(a), c.x, c.y, ann.tau, p.split});
      }
    }
    m.patients.push_back(std::move(p));
  }
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

// ---- loading ---------------------------------------------------------------

/// One training/evaluation example as held in memory.
struct Sample {
  std::array<embedding::Image, 3> slices;
  std::vector<heatmap::Point2> targets;
  std::vector<double> taus;
  std::string condition;
  std::string patient;
  int t = 0;
};

/// Loads every triplet of a split (all triplets when `split` is empty).
/// Slices are read once per patient. A non-negative `k` overrides the recorded
/// slice interval.
inline std::vector<Sample> load_samples(const Manifest& m, const std::string& split = {}, int k = -1) {
  std::map<std::string, std::vector<embedding::Image>> cache;
  std::vector<Sample> out;
  for (const auto& t : m.triplets) {
    if (!split.empty() && t.split != split) continue;
    const auto& p = m.patient(t.patient);
    auto it = cache.find(p.id);
    if (it == cache.end()) {
      std::vector<embedding::Image> vol;
      for (const auto& s : p.slices) vol.push_back(read_pgm(m.root / s));
      it = cache.emplace(p.id, std::move(vol)).first;
    }
    const auto& vol = it->second;
    const int kk = k >= 0 ? k : t.k;
    if (t.t - kk < 0 || t.t + kk >= static_cast<int>(vol.size())) {
      throw DataError("manifest: triplet (" + t.patient + ", t=" + std::to_string(t.t) + ", k=" + std::to_string(kk) +
                      ") out of range");
    }
    Sample s;
    s.slices = {vol[t.t - kk], vol[t.t], vol[t.t + kk]};
    s.targets = {{t.x, t.y}};
    s.taus = {t.tau};
    s.condition = t.condition;
    s.patient = t.patient;
    s.t = t.t;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tcslot::dataset
