#include "iris/datagen.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include <json.hpp>

#include "iris/error.hpp"
#include "iris/image_io.hpp"
#include "iris/rng.hpp"

namespace iris {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Spectrum s) { return s == Spectrum::VW ? "VW" : "NIR"; }
std::string to_string(Eye e) { return e == Eye::Left ? "left" : "right"; }

Spectrum parse_spectrum(const std::string& s) {
  if (s == "VW" || s == "vw") return Spectrum::VW;
  if (s == "NIR" || s == "nir") return Spectrum::NIR;
  throw ContractViolation("unknown spectrum '" + s + "' (expected VW or NIR)");
}

Eye parse_eye(const std::string& s) {
  if (s == "left" || s == "Left" || s == "L") return Eye::Left;
  if (s == "right" || s == "Right" || s == "R") return Eye::Right;
  throw ContractViolation("unknown eye '" + s + "' (expected left or right)");
}

fs::path DatasetManifest::resolve(const std::string& rel) const {
  const fs::path p(rel);
  return p.is_absolute() ? p : base_dir / p;
}

ClassCounts class_counts(const DatasetManifest& m) {
  std::set<int> ids;
  std::set<std::pair<int, int>> eyes;
  for (const auto& s : m.samples) {
    ids.insert(s.identity);
    eyes.insert({s.identity, static_cast<int>(s.eye)});
  }
  return ClassCounts{static_cast<int>(ids.size()), static_cast<int>(eyes.size()), m.samples.size()};
}

std::vector<int> class_labels(const DatasetManifest& m, LabelLevel level) {
  std::map<std::pair<int, int>, int> index;
  for (const auto& s : m.samples)
    index.emplace(std::pair{s.identity, level == LabelLevel::Eye ? static_cast<int>(s.eye) : 0}, 0);
  int next = 0;
  for (auto& [key, v] : index) v = next++;
  std::vector<int> labels;
  labels.reserve(m.samples.size());
  for (const auto& s : m.samples)
    labels.push_back(index.at({s.identity, level == LabelLevel::Eye ? static_cast<int>(s.eye) : 0}));
  return labels;
}

void SynthSpec::validate() const {
  require(num_identities > 0, "num_identities must be positive");
  require(images_per_identity > 0, "images_per_identity must be positive");
  require(image_size >= 16, "image_size must be at least 16");
}

// ---------------------------------------------------------------------------
// Renderer

namespace {

struct Band {
  double angular;  // cycles around the iris
  double radial;   // cycles across the annulus
  double phase;
  double weight;
};

struct IdentityModel {
  std::array<double, 3> color{};  // iris base colour, VW
  double level = 0.0;             // iris base intensity, NIR
  double radius_frac = 0.2;       // iris radius / image size
  double pupil_frac = 0.4;        // pupil radius / iris radius
  double ring_pos = 0.5;          // collarette position across the annulus
  std::array<Band, 4> bands{};
};

std::array<double, 3> hsv(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(hh);
  const double f = hh - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

IdentityModel identity_model(std::uint64_t seed) {
  Rng rng(seed);
  IdentityModel m;
  const auto rgb = hsv(rng.uniform(), rng.uniform(0.35, 0.85), rng.uniform(0.35, 0.8));
  for (int c = 0; c < 3; ++c) m.color[static_cast<std::size_t>(c)] = 255.0 * rgb[static_cast<std::size_t>(c)];
  m.level = rng.uniform(60.0, 180.0);
  m.radius_frac = rng.uniform(0.17, 0.23);
  m.pupil_frac = rng.uniform(0.28, 0.5);
  m.ring_pos = rng.uniform(0.25, 0.75);
  double total = 0.0;
  for (auto& b : m.bands) {
    b.angular = static_cast<double>(2 + rng.index(14));
    b.radial = rng.uniform(0.5, 4.0);
    b.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    b.weight = rng.uniform(0.2, 1.0);
    total += b.weight;
  }
  for (auto& b : m.bands) b.weight /= total;
  return m;
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

}  // namespace

std::uint64_t identity_seed(const SynthSpec& spec, int identity) {
  return derive_seed(spec.seed, {0x1d, static_cast<std::uint64_t>(identity)});
}

Pose sample_pose(const SynthSpec& spec, int identity, int index) {
  spec.validate();
  const IdentityModel id = identity_model(identity_seed(spec, identity));
  Rng rng(derive_seed(spec.seed, {0x9053, static_cast<std::uint64_t>(identity), static_cast<std::uint64_t>(index)}));
  const double s = spec.image_size;
  Pose p;
  p.iris_r = id.radius_frac * s * rng.uniform(0.88, 1.12);
  p.pupil_r = p.iris_r * std::clamp(id.pupil_frac * rng.uniform(0.85, 1.15), 0.2, 0.6);
  p.cx = 0.5 * s + rng.uniform(-0.08, 0.08) * s;
  p.cy = 0.5 * s + rng.uniform(-0.08, 0.08) * s;
  p.rotation = rng.uniform(-0.35, 0.35);
  p.eyelid = spec.eyelid && rng.uniform() < 0.5 ? rng.uniform(0.05, 0.4) : 0.0;
  if (spec.highlight) {
    p.highlight = true;
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double rad = p.pupil_r * rng.uniform(0.6, 1.4);
    p.highlight_x = p.cx + rad * std::cos(ang);
    p.highlight_y = p.cy + rad * std::sin(ang);
    p.highlight_r = std::max(1.0, 0.035 * s * rng.uniform(0.7, 1.3));
  }
  if (spec.partial && rng.uniform() < 0.15) {
    // Push the iris partly out of frame.
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    p.cx = side < 0 ? p.iris_r * rng.uniform(0.3, 0.8) : s - p.iris_r * rng.uniform(0.3, 0.8);
  }
  p.noise_seed = derive_seed(spec.seed, {0x7015e, static_cast<std::uint64_t>(identity), static_cast<std::uint64_t>(index)});
  return p;
}

RenderedEye render_eye(std::uint64_t identity_seed_value, const Pose& pose, const SynthSpec& spec) {
  spec.validate();
  const IdentityModel id = identity_model(identity_seed_value);
  const int n = spec.image_size;
  const bool vw = spec.spectrum == Spectrum::VW;
  const int channels = vw ? 3 : 1;

  const std::array<double, 3> skin = vw ? std::array<double, 3>{196.0, 150.0, 128.0} : std::array<double, 3>{120.0, 120.0, 120.0};
  const std::array<double, 3> sclera = vw ? std::array<double, 3>{226.0, 220.0, 214.0} : std::array<double, 3>{200.0, 200.0, 200.0};
  const double pupil_level = 18.0;
  const double r = pose.iris_r;
  const double lid_top = pose.cy - r * (1.3 - 2.3 * pose.eyelid);
  const double lid_curve = 0.3 / r;

  Rng noise(pose.noise_seed);
  RenderedEye out{Tensor({channels, n, n}), Box{}, Tensor({n, n})};
  int bx0 = n, by0 = n, bx1 = -1, by1 = -1;

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double dx = px - pose.cx, dy = py - pose.cy;
      const double rho = std::hypot(dx, dy);
      const bool under_lid = py < lid_top + lid_curve * dx * dx;
      const bool in_sclera = (dx * dx) / (4.0 * r * r) + (dy * dy) / (1.6 * r * r) < 1.0;

      std::array<double, 3> c = skin;
      if (!under_lid && in_sclera) c = sclera;
      const bool in_annulus = rho < r && rho >= pose.pupil_r;
      if (!under_lid && rho < r) {
        if (rho < pose.pupil_r) {
          c = {pupil_level, pupil_level, pupil_level};
        } else {
          const double theta = std::atan2(dy, dx) - pose.rotation;
          const double u = (rho - pose.pupil_r) / (r - pose.pupil_r);
          double tex = 0.0;
          for (const auto& b : id.bands)
            tex += b.weight * std::cos(b.angular * theta + 2.0 * std::numbers::pi * b.radial * u + b.phase);
          const double ring = 0.25 * std::exp(-std::pow((u - id.ring_pos) / 0.08, 2.0));
          const double limbus = 1.0 - 0.45 * smoothstep(0.8, 1.0, u);
          const double gain = (1.0 + 0.4 * tex + ring) * limbus;
          if (vw) {
            for (int k = 0; k < 3; ++k) c[static_cast<std::size_t>(k)] = id.color[static_cast<std::size_t>(k)] * gain;
          } else {
            c = {id.level * gain, id.level * gain, id.level * gain};
          }
        }
      }
      if (pose.highlight && !under_lid && std::hypot(px - pose.highlight_x, py - pose.highlight_y) < pose.highlight_r)
        c = {250.0, 250.0, 250.0};

      for (int k = 0; k < channels; ++k) {
        const double v = c[static_cast<std::size_t>(k)] + 3.0 * noise.normal();
        out.image[(static_cast<std::size_t>(k) * n + y) * n + x] = static_cast<float>(std::nearbyint(std::clamp(v, 0.0, 255.0)));
      }
      if (in_annulus && !under_lid) {
        out.mask[static_cast<std::size_t>(y) * n + x] = 1.0f;
        bx0 = std::min(bx0, x);
        by0 = std::min(by0, y);
        bx1 = std::max(bx1, x);
        by1 = std::max(by1, y);
      }
    }
  }
  if (bx1 >= 0) out.gt_box = Box{double(bx0), double(by0), double(bx1 + 1), double(by1 + 1)};
  return out;
}

// ---------------------------------------------------------------------------
// Manifest I/O

namespace {

json sample_to_json(const IrisSample& s) {
  json j{{"path", s.image_path}, {"identity", s.identity}, {"eye", to_string(s.eye)}, {"spectrum", to_string(s.spectrum)}};
  j["box"] = s.gt_box ? json::array({s.gt_box->x_min, s.gt_box->y_min, s.gt_box->x_max, s.gt_box->y_max}) : json(nullptr);
  j["mask_path"] = s.mask_path.empty() ? json(nullptr) : json(s.mask_path);
  return j;
}

IrisSample sample_from_json(const json& j, std::size_t idx) {
  const std::string where = "manifest record " + std::to_string(idx);
  try {
    IrisSample s;
    require(j.is_object(), where + ": not an object");
    s.image_path = j.at("path").get<std::string>();
    require(!s.image_path.empty(), where + ": empty path");
    s.identity = j.at("identity").get<int>();
    require(s.identity >= 0, where + ": negative identity");
    s.eye = parse_eye(j.at("eye").get<std::string>());
    s.spectrum = parse_spectrum(j.at("spectrum").get<std::string>());
    if (j.contains("box") && !j.at("box").is_null()) {
      const auto& b = j.at("box");
      require(b.is_array() && b.size() == 4, where + ": box must be [x0,y0,x1,y1]");
      s.gt_box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      require(s.gt_box->valid() && s.gt_box->x_min >= 0 && s.gt_box->y_min >= 0, where + ": box is not a valid rectangle");
    }
    if (j.contains("mask_path") && !j.at("mask_path").is_null()) s.mask_path = j.at("mask_path").get<std::string>();
    return s;
  } catch (const json::exception& e) {
    throw ContractViolation(where + ": " + e.what());
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    throw ContractViolation(msg.rfind(where, 0) == 0 ? msg : where + ": " + msg);
  }
}

}  // namespace

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  json j{{"version", m.version}, {"samples", json::array()}};
  for (const auto& s : m.samples) j["samples"].push_back(sample_to_json(s));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(1) << '\n';
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ContractViolation("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  require(j.is_object() && j.contains("samples") && j["samples"].is_array(),
          "manifest " + path.string() + " lacks a samples array");
  DatasetManifest m;
  m.version = j.value("version", 1);
  require(m.version == 1, "unsupported manifest version " + std::to_string(m.version));
  m.base_dir = path.parent_path();
  for (std::size_t i = 0; i < j["samples"].size(); ++i) m.samples.push_back(sample_from_json(j["samples"][i], i));
  for (const auto& s : m.samples) {
    if (!fs::exists(m.resolve(s.image_path))) throw IoError("manifest references missing file " + m.resolve(s.image_path).string());
    if (!s.mask_path.empty() && !fs::exists(m.resolve(s.mask_path)))
      throw IoError("manifest references missing file " + m.resolve(s.mask_path).string());
  }
  return m;
}

DatasetManifest synth_dataset(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  DatasetManifest m;
  m.base_dir = out_dir;
  for (int id = 0; id < spec.num_identities; ++id) {
    const std::uint64_t iseed = identity_seed(spec, id);
    for (int k = 0; k < spec.images_per_identity; ++k) {
      const RenderedEye eye = render_eye(iseed, sample_pose(spec, id, k), spec);
      char stem[64];
      std::snprintf(stem, sizeof stem, "id%03d_%03d", id, k);
      IrisSample s;
      s.image_path = std::string("images/") + stem + ".png";
      s.mask_path = std::string("masks/") + stem + ".pbm";
      s.identity = id;
      s.eye = k % 2 == 0 ? Eye::Left : Eye::Right;
      s.spectrum = spec.spectrum;
      s.gt_box = eye.gt_box;
      write_png(out_dir / s.image_path, eye.image);
      write_pbm(out_dir / s.mask_path, eye.mask);
      m.samples.push_back(std::move(s));
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

// ---------------------------------------------------------------------------
// UTiris tree import

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::optional<Spectrum> session_of(const std::string& name) {
  const std::string n = lower(name);
  if (n == "vw" || n == "rgb" || n == "rgb images" || n == "visible") return Spectrum::VW;
  if (n == "nir" || n == "infrared" || n == "infrared images") return Spectrum::NIR;
  return std::nullopt;
}

std::optional<Eye> eye_of(const std::string& name) {
  const std::string n = lower(name);
  if (n == "left" || n == "l") return Eye::Left;
  if (n == "right" || n == "r") return Eye::Right;
  return std::nullopt;
}

bool is_image(const fs::path& p) {
  const std::string e = lower(p.extension().string());
  return e == ".png" || e == ".jpg" || e == ".jpeg" || e == ".bmp" || e == ".pgm" || e == ".ppm";
}

std::vector<fs::path> sorted_children(const fs::path& dir, bool dirs) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (dirs ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DatasetManifest import_utiris(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("UTiris root is not a directory: " + root.string());
  struct Found {
    std::string person;
    Spectrum spectrum;
    Eye eye;
    fs::path file;
  };
  std::vector<Found> found;
  auto scan_eyes = [&](const fs::path& dir, const std::string& person, Spectrum spec) {
    for (const auto& eye_dir : sorted_children(dir, true)) {
      const auto eye = eye_of(eye_dir.filename().string());
      if (!eye) continue;
      for (const auto& f : sorted_children(eye_dir, false))
        if (is_image(f)) found.push_back({person, spec, *eye, f});
    }
  };
  for (const auto& top : sorted_children(root, true)) {
    if (const auto spec = session_of(top.filename().string())) {
      for (const auto& person : sorted_children(top, true)) scan_eyes(person, person.filename().string(), *spec);
    } else {
      for (const auto& sess : sorted_children(top, true))
        if (const auto s = session_of(sess.filename().string())) scan_eyes(sess, top.filename().string(), *s);
    }
  }
  std::map<std::string, int> person_index;
  for (const auto& f : found) person_index.emplace(f.person, 0);
  int next = 0;
  for (auto& [name, idx] : person_index) idx = next++;

  DatasetManifest m;
  m.base_dir = root;
  for (const auto& f : found) {
    IrisSample s;
    s.image_path = fs::relative(f.file, root).generic_string();
    s.identity = person_index.at(f.person);
    s.eye = f.eye;
    s.spectrum = f.spectrum;
    m.samples.push_back(std::move(s));
  }
  return m;
}

SplitIndices detector_split(std::size_t n, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "train fraction must lie in (0,1)");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x5b11}));
  rng.shuffle(order);
  const auto k = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  require(k > 0 && k < n, "detector split leaves an empty side (n=" + std::to_string(n) + ")");
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  return s;
}

}  // namespace iris
