#include "compsplat/assets.hpp"

#include "compsplat/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <map>
#include <sstream>

namespace compsplat {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

static_assert(std::endian::native == std::endian::little, "binary PLY/PFM I/O assumes a little-endian host");

constexpr double kShC0 = 0.28209479177;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// ---- manifest JSON ----------------------------------------------------------

class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ParseError(where() + ": expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& [k, _] : j_.items())
      if (std::find_if(keys.begin(), keys.end(), [&](const char* a) { return k == a; }) == keys.end())
        throw ParseError(where() + ": unknown field '" + k + "'");
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ParseError("field " + child(key) + ": " + e.what());
    }
  }

  template <typename T>
  T required(const char* key) const {
    if (!j_.contains(key)) throw ParseError("missing field " + child(key));
    T out{};
    get(key, out);
    return out;
  }

 private:
  std::string where() const { return path_.empty() ? "manifest" : "field " + path_; }
  const json& j_;
  std::string path_;
};

Vec3 parse_vec3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw ParseError("field " + path + ": expected 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ParseError("field " + path + ": expected 3 numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

Aabb3 parse_box(const json& j, const std::string& path) {
  Fields f(j, path);
  f.allow({"min", "max"});
  if (!f.has("min") || !f.has("max")) throw ParseError("field " + path + ": needs min and max");
  Aabb3 b{parse_vec3(f.raw("min"), f.child("min")), parse_vec3(f.raw("max"), f.child("max"))};
  if (!b.valid()) throw ParseError("field " + path + ": min exceeds max");
  return b;
}

Range parse_range(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ParseError("field " + path + ": expected [lo, hi]");
  Range r{j[0].get<double>(), j[1].get<double>()};
  if (!r.valid()) throw ParseError("field " + path + ": lo exceeds hi");
  return r;
}

void parse_schedule(const Fields& parent, const char* key, LrSchedule& out) {
  if (!parent.has(key)) return;
  const json& j = parent.raw(key);
  if (j.is_number()) {
    out.start = out.end = j.get<double>();
    return;
  }
  Fields f(j, parent.child(key));
  f.allow({"start", "end"});
  f.get("start", out.start);
  f.get("end", out.end);
}

ordered_json box_json(const Aabb3& b) {
  return {{"min", {b.min.x(), b.min.y(), b.min.z()}}, {"max", {b.max.x(), b.max.y(), b.max.z()}}};
}

ordered_json range_json(const Range& r) { return ordered_json::array({r.lo, r.hi}); }

ordered_json schedule_json(const LrSchedule& s) { return {{"start", s.start}, {"end", s.end}}; }

const char* rule_name(UpdateRule r) {
  switch (r) {
    case UpdateRule::Sgd: return "sgd";
    case UpdateRule::Momentum: return "momentum";
    case UpdateRule::Adam: return "adam";
  }
  return "sgd";
}

OptimConfig parse_optim(const json& j, const std::string& path) {
  OptimConfig c;
  Fields f(j, path);
  f.allow({"total_iters", "lr", "initial_points", "point_budget", "batch_views", "ablations", "bbox_refresh_every",
           "freeze_bbox", "vao_positions_only", "mask_by_containment", "scalar_nn", "composition_probability",
           "rule", "momentum", "adam_beta1", "adam_beta2", "adam_eps", "densify", "timesteps", "precision",
           "background", "seed"});
  f.get("total_iters", c.total_iters);
  if (f.has("lr")) {
    Fields lr(f.raw("lr"), f.child("lr"));
    lr.allow({"position", "scale", "color", "opacity", "rotation"});
    parse_schedule(lr, "position", c.position);
    parse_schedule(lr, "scale", c.scale);
    parse_schedule(lr, "color", c.color);
    parse_schedule(lr, "opacity", c.opacity);
    parse_schedule(lr, "rotation", c.rotation);
  }
  f.get("initial_points", c.initial_points);
  f.get("point_budget", c.point_budget);
  f.get("batch_views", c.batch_views);
  if (f.has("ablations")) {
    Fields a(f.raw("ablations"), f.child("ablations"));
    a.allow({"no_do", "no_vao", "random_init"});
    a.get("no_do", c.ablations.no_do);
    a.get("no_vao", c.ablations.no_vao);
    a.get("random_init", c.ablations.random_init);
  }
  f.get("bbox_refresh_every", c.bbox_refresh_every);
  f.get("freeze_bbox", c.freeze_bbox);
  f.get("vao_positions_only", c.vao_positions_only);
  f.get("mask_by_containment", c.mask_by_containment);
  f.get("scalar_nn", c.scalar_nn);
  f.get("composition_probability", c.composition_probability);
  if (f.has("rule")) {
    const auto r = f.required<std::string>("rule");
    if (r == "sgd") c.rule = UpdateRule::Sgd;
    else if (r == "momentum") c.rule = UpdateRule::Momentum;
    else if (r == "adam") c.rule = UpdateRule::Adam;
    else throw ParseError("field " + f.child("rule") + ": expected sgd, momentum or adam");
  }
  f.get("momentum", c.momentum);
  f.get("adam_beta1", c.adam_beta1);
  f.get("adam_beta2", c.adam_beta2);
  f.get("adam_eps", c.adam_eps);
  if (f.has("densify")) {
    Fields d(f.raw("densify"), f.child("densify"));
    d.allow({"enabled", "grad_threshold", "size_threshold", "prune_opacity", "every", "from", "until"});
    d.get("enabled", c.densify.enabled);
    d.get("grad_threshold", c.densify.grad_threshold);
    d.get("size_threshold", c.densify.size_threshold);
    d.get("prune_opacity", c.densify.prune_opacity);
    d.get("every", c.densify.every);
    d.get("from", c.densify.from);
    d.get("until", c.densify.until);
  }
  if (f.has("timesteps")) {
    Fields t(f.raw("timesteps"), f.child("timesteps"));
    t.allow({"phase1", "phase2", "switch_iter"});
    if (t.has("phase1")) c.timesteps.phase1 = parse_range(t.raw("phase1"), t.child("phase1"));
    if (t.has("phase2")) c.timesteps.phase2 = parse_range(t.raw("phase2"), t.child("phase2"));
    t.get("switch_iter", c.timesteps.phase_switch_iter);
  }
  if (f.has("precision")) {
    const auto p = f.required<std::string>("precision");
    if (p == "f32") c.precision = Precision::Single;
    else if (p == "f64") c.precision = Precision::Double;
    else throw ParseError("field " + f.child("precision") + ": expected f32 or f64");
  }
  if (f.has("background")) c.background = parse_vec3(f.raw("background"), f.child("background"));
  f.get("seed", c.seed);
  if (const auto err = c.validate(); !err.empty()) throw ParseError("field " + path + ": " + err);
  return c;
}

ordered_json optim_json(const OptimConfig& c) {
  ordered_json j;
  j["total_iters"] = c.total_iters;
  j["lr"] = {{"position", schedule_json(c.position)},
             {"scale", schedule_json(c.scale)},
             {"color", schedule_json(c.color)},
             {"opacity", schedule_json(c.opacity)},
             {"rotation", schedule_json(c.rotation)}};
  j["initial_points"] = c.initial_points;
  j["point_budget"] = c.point_budget;
  j["batch_views"] = c.batch_views;
  j["ablations"] = {{"no_do", c.ablations.no_do},
                    {"no_vao", c.ablations.no_vao},
                    {"random_init", c.ablations.random_init}};
  j["bbox_refresh_every"] = c.bbox_refresh_every;
  j["freeze_bbox"] = c.freeze_bbox;
  j["vao_positions_only"] = c.vao_positions_only;
  j["mask_by_containment"] = c.mask_by_containment;
  j["scalar_nn"] = c.scalar_nn;
  j["composition_probability"] = c.composition_probability;
  j["rule"] = rule_name(c.rule);
  j["momentum"] = c.momentum;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["densify"] = {{"enabled", c.densify.enabled},
                  {"grad_threshold", c.densify.grad_threshold},
                  {"size_threshold", c.densify.size_threshold},
                  {"prune_opacity", c.densify.prune_opacity},
                  {"every", c.densify.every},
                  {"from", c.densify.from},
                  {"until", c.densify.until}};
  j["timesteps"] = {{"phase1", range_json(c.timesteps.phase1)},
                    {"phase2", range_json(c.timesteps.phase2)},
                    {"switch_iter", c.timesteps.phase_switch_iter}};
  j["precision"] = c.precision == Precision::Double ? "f64" : "f32";
  j["background"] = {c.background.x(), c.background.y(), c.background.z()};
  j["seed"] = c.seed;
  return j;
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

// ---- PLY ----------------------------------------------------------------------

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

PlyType ply_type(const std::string& s) {
  static const std::map<std::string, PlyType> m = {
      {"char", PlyType::I8},     {"int8", PlyType::I8},     {"uchar", PlyType::U8},   {"uint8", PlyType::U8},
      {"short", PlyType::I16},   {"int16", PlyType::I16},   {"ushort", PlyType::U16}, {"uint16", PlyType::U16},
      {"int", PlyType::I32},     {"int32", PlyType::I32},   {"uint", PlyType::U32},   {"uint32", PlyType::U32},
      {"float", PlyType::F32},   {"float32", PlyType::F32}, {"double", PlyType::F64}, {"float64", PlyType::F64}};
  const auto it = m.find(s);
  if (it == m.end()) throw ParseError("unsupported PLY type '" + s + "'");
  return it->second;
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::I8: case PlyType::U8: return 1;
    case PlyType::I16: case PlyType::U16: return 2;
    case PlyType::I32: case PlyType::U32: case PlyType::F32: return 4;
    case PlyType::F64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::F32;
  bool is_list = false;
  PlyType count_type = PlyType::U8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

struct PlyData {
  std::vector<std::string> comments;
  PlyElement vertex;
  std::vector<std::vector<double>> columns;  // per vertex property
  bool has_vertex = false;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < vertex.props.size(); ++i)
      if (vertex.props[i].name == name && !vertex.props[i].is_list) return static_cast<int>(i);
    return -1;
  }
};

double read_binary_scalar(const std::string& buf, std::size_t& pos, PlyType t) {
  const std::size_t n = ply_size(t);
  if (pos + n > buf.size()) throw ParseError("PLY body is truncated");
  const char* p = buf.data() + pos;
  pos += n;
  switch (t) {
    case PlyType::I8: { std::int8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::U8: { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::I16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::U16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::I32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::U32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::F32: { float v; std::memcpy(&v, p, 4); return v; }
    case PlyType::F64: { double v; std::memcpy(&v, p, 8); return v; }
  }
  return 0.0;
}

PlyData read_ply(const fs::path& path) {
  const std::string buf = read_file(path);
  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t e = buf.find('\n', pos);
    if (e == std::string::npos) throw ParseError(path.string() + ": PLY header is not terminated");
    std::string line = buf.substr(pos, e - pos);
    pos = e + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  if (next_line() != "ply") throw ParseError(path.string() + ": not a PLY file");
  bool binary = false;
  std::vector<PlyElement> elements;
  PlyData data;
  for (;;) {
    const std::string line = next_line();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw ParseError(path.string() + ": unsupported PLY format '" + fmt + "'");
    } else if (word == "comment") {
      data.comments.push_back(line.size() > 8 ? line.substr(8) : std::string{});
    } else if (word == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      if (ls.fail()) throw ParseError(path.string() + ": bad element line '" + line + "'");
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw ParseError(path.string() + ": property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = ply_type(ct);
        p.type = ply_type(it);
      } else {
        p.type = ply_type(t);
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (word == "obj_info" || word.empty()) {
      continue;
    } else {
      throw ParseError(path.string() + ": unexpected header line '" + line + "'");
    }
  }

  std::istringstream ascii(binary ? std::string{} : buf.substr(pos));
  auto read_value = [&](PlyType t) -> double {
    if (binary) return read_binary_scalar(buf, pos, t);
    double v;
    if (!(ascii >> v)) throw ParseError(path.string() + ": PLY body is truncated or malformed");
    return v;
  };

  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex" && !data.has_vertex;
    if (is_vertex) {
      data.vertex = e;
      data.has_vertex = true;
      data.columns.assign(e.props.size(), std::vector<double>(e.count));
    }
    for (std::size_t r = 0; r < e.count; ++r) {
      for (std::size_t k = 0; k < e.props.size(); ++k) {
        const auto& p = e.props[k];
        if (p.is_list) {
          const double n = read_value(p.count_type);
          if (n < 0) throw ParseError(path.string() + ": negative list length");
          for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) read_value(p.type);
        } else {
          const double v = read_value(p.type);
          if (is_vertex) data.columns[k][r] = v;
        }
      }
    }
  }
  if (!data.has_vertex) throw ParseError(path.string() + ": PLY has no vertex element");
  return data;
}

void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  char b[4];
  std::memcpy(b, &f, 4);
  out.append(b, 4);
}

std::string run_length_tags(const std::vector<int>& tags) {
  std::string out;
  std::size_t i = 0;
  while (i < tags.size()) {
    std::size_t j = i;
    while (j < tags.size() && tags[j] == tags[i]) ++j;
    if (!out.empty()) out += ' ';
    out += std::to_string(tags[i]) + "x" + std::to_string(j - i);
    i = j;
  }
  return out;
}

std::vector<int> expand_tags(const std::string& text) {
  std::vector<int> out;
  std::istringstream ss(text);
  std::string run;
  while (ss >> run) {
    const auto x = run.find('x');
    if (x == std::string::npos) throw ParseError("bad entity tag run '" + run + "'");
    try {
      const int tag = std::stoi(run.substr(0, x));
      const auto count = std::stoull(run.substr(x + 1));
      out.insert(out.end(), count, tag);
    } catch (const std::logic_error&) {
      throw ParseError("bad entity tag run '" + run + "'");
    }
  }
  return out;
}

double logit(double p) {
  p = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return std::log(p / (1.0 - p));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

json view_json(const Camera& c) {
  json m = json::array();
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k) m.push_back(c.world_to_view(r, k));
  return {{"view", m},        {"fov_y_deg", c.intr.fov_y_deg}, {"width", c.intr.width},
          {"height", c.intr.height}, {"near", c.intr.near},    {"far", c.intr.far}};
}

}  // namespace

fs::path SceneManifest::resolve(const std::string& relative) const {
  const fs::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

SceneManifest parse_manifest(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("manifest line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  SceneManifest m;
  m.base_dir = base_dir;
  Fields f(j, "");
  f.allow({"composition_prompt", "entities", "bbox_std", "optim", "camera", "guidance"});
  f.get("composition_prompt", m.composition_prompt);
  if (f.has("bbox_std")) m.bbox_std = parse_box(f.raw("bbox_std"), "bbox_std");
  if (!(m.bbox_std.extent().array() > 0.0).all()) throw ParseError("field bbox_std: zero-extent axis");

  if (!f.has("entities") || !f.raw("entities").is_array() || f.raw("entities").empty())
    throw ParseError("field entities: expected a non-empty array");
  const json& ents = f.raw("entities");
  for (std::size_t k = 0; k < ents.size(); ++k) {
    const std::string path = "entities[" + std::to_string(k) + "]";
    Fields e(ents[k], path);
    e.allow({"id", "prompt", "mesh", "bbox"});
    ManifestEntity me;
    me.id = e.required<int>("id");
    if (me.id < 1) throw ParseError("field " + path + ".id: entity ids start at 1");
    e.get("prompt", me.prompt);
    me.mesh = e.required<std::string>("mesh");
    if (e.has("bbox")) me.bbox = parse_box(e.raw("bbox"), e.child("bbox"));
    for (const auto& prev : m.entities)
      if (prev.id == me.id) throw ParseError("duplicate entity id " + std::to_string(me.id));
    if (!fs::exists(m.resolve(me.mesh)))
      throw ParseError("field " + path + ".mesh: mesh file not found: " + m.resolve(me.mesh).string());
    m.entities.push_back(me);
  }

  if (f.has("optim")) m.optim = parse_optim(f.raw("optim"), "optim");
  if (f.has("camera")) {
    Fields c(f.raw("camera"), "camera");
    c.allow({"radius", "fov_y", "elevation", "azimuth", "width", "height"});
    if (c.has("radius")) m.camera.radius = parse_range(c.raw("radius"), "camera.radius");
    if (c.has("fov_y")) m.camera.fov_y = parse_range(c.raw("fov_y"), "camera.fov_y");
    if (c.has("elevation")) m.camera.elevation = parse_range(c.raw("elevation"), "camera.elevation");
    if (c.has("azimuth")) m.camera.azimuth = parse_range(c.raw("azimuth"), "camera.azimuth");
    c.get("width", m.camera.width);
    c.get("height", m.camera.height);
    if (!m.camera.valid()) throw ParseError("field camera: invalid ranges");
  }
  if (f.has("guidance")) {
    Fields g(f.raw("guidance"), "guidance");
    g.allow({"mode", "target_views_dir", "host", "port"});
    const auto mode = g.required<std::string>("mode");
    if (mode == "photometric") m.guidance.mode = GuidanceMode::Photometric;
    else if (mode == "remote") m.guidance.mode = GuidanceMode::Remote;
    else throw ParseError("field guidance.mode: expected photometric or remote");
    g.get("target_views_dir", m.guidance.target_views_dir);
    g.get("host", m.guidance.host);
    g.get("port", m.guidance.port);
  }
  return m;
}

SceneManifest load_manifest(const fs::path& path) {
  return parse_manifest(read_file(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

std::string manifest_to_json(const SceneManifest& m) {
  ordered_json j;
  j["composition_prompt"] = m.composition_prompt;
  j["entities"] = ordered_json::array();
  for (const auto& e : m.entities) {
    ordered_json je = {{"id", e.id}, {"prompt", e.prompt}, {"mesh", e.mesh}};
    if (e.bbox) je["bbox"] = box_json(*e.bbox);
    j["entities"].push_back(je);
  }
  j["bbox_std"] = box_json(m.bbox_std);
  j["optim"] = optim_json(m.optim);
  j["camera"] = {{"radius", range_json(m.camera.radius)},
                 {"fov_y", range_json(m.camera.fov_y)},
                 {"elevation", range_json(m.camera.elevation)},
                 {"azimuth", range_json(m.camera.azimuth)},
                 {"width", m.camera.width},
                 {"height", m.camera.height}};
  ordered_json g;
  g["mode"] = m.guidance.mode == GuidanceMode::Remote ? "remote" : "photometric";
  g["target_views_dir"] = m.guidance.target_views_dir;
  g["host"] = m.guidance.host;
  g["port"] = m.guidance.port;
  j["guidance"] = g;
  return j.dump(2) + "\n";
}

void save_manifest(const SceneManifest& m, const fs::path& path) { write_file(path, manifest_to_json(m)); }

EntityMesh load_mesh(const fs::path& path, int entity_id, const std::string& prompt) {
  EntityMesh mesh;
  mesh.entity_id = entity_id;
  mesh.prompt = prompt;
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });

  if (ext == ".obj") {
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream ls(line);
      std::string tag;
      ls >> tag;
      if (tag != "v") continue;
      std::vector<double> vals;
      double v;
      while (ls >> v) vals.push_back(v);
      if (vals.size() < 3)
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": vertex needs x y z");
      if (vals.size() < 6)
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": missing vertex colors (expected v x y z r g b)");
      mesh.vertices.emplace_back(vals[0], vals[1], vals[2]);
      mesh.colors.emplace_back(vals[3], vals[4], vals[5]);
    }
  } else if (ext == ".ply") {
    const PlyData ply = read_ply(path);
    const int x = ply.column("x"), y = ply.column("y"), z = ply.column("z");
    if (x < 0 || y < 0 || z < 0) throw ParseError(path.string() + ": vertex positions missing");
    const int r = ply.column("red"), g = ply.column("green"), b = ply.column("blue");
    if (r < 0 || g < 0 || b < 0) throw ParseError(path.string() + ": missing vertex colors (red/green/blue)");
    const bool bytes = ply.vertex.props[static_cast<std::size_t>(r)].type == PlyType::U8;
    const double scale = bytes ? 1.0 / 255.0 : 1.0;
    for (std::size_t i = 0; i < ply.vertex.count; ++i) {
      mesh.vertices.emplace_back(ply.columns[x][i], ply.columns[y][i], ply.columns[z][i]);
      mesh.colors.emplace_back(ply.columns[r][i] * scale, ply.columns[g][i] * scale, ply.columns[b][i] * scale);
    }
  } else {
    throw ParseError(path.string() + ": unsupported mesh format '" + ext + "' (expected .obj or .ply)");
  }
  if (mesh.vertices.empty()) throw EmptyEntityError(path.string() + ": mesh has no vertices");
  for (const auto& c : mesh.colors)
    if (!c.allFinite() || (c.array() < 0.0).any() || (c.array() > 1.0).any())
      throw ParseError(path.string() + ": vertex color outside [0, 1]");
  return mesh;
}

void save_mesh_ply(const EntityMesh& mesh, const fs::path& path) {
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\nelement vertex " << mesh.vertices.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property float red\nproperty float green\nproperty float blue\nend_header\n";
  out.precision(9);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    const Vec3& c = mesh.colors[i];
    out << v.x() << ' ' << v.y() << ' ' << v.z() << ' ' << c.x() << ' ' << c.y() << ' ' << c.z() << '\n';
  }
  write_file(path, out.str());
}

Scene init_scene_from_manifest(const SceneManifest& m, std::optional<std::uint64_t> seed) {
  std::vector<EntitySpec> specs;
  for (const auto& e : m.entities) {
    EntitySpec s;
    s.mesh = load_mesh(m.resolve(e.mesh), e.id, e.prompt);
    s.bbox_override = e.bbox;
    specs.push_back(std::move(s));
  }
  InitOptions opt;
  opt.total_points = static_cast<std::size_t>(m.optim.initial_points);
  opt.scalar_nn = m.optim.scalar_nn;
  opt.random_init = m.optim.ablations.random_init;
  opt.seed = seed.value_or(m.optim.seed);
  return init_scene(specs, m.composition_prompt, m.bbox_std, opt);
}

void export_gaussians_ply(const Scene& scene, const fs::path& path) {
  const auto& g = scene.gaussians;
  std::string out = "ply\nformat binary_little_endian 1.0\n";
  out += "comment compsplat composition " + json(scene.composition_prompt).dump() + "\n";
  const Aabb3& s = scene.bbox_std;
  out += "comment compsplat bbox_std " + json::array({s.min.x(), s.min.y(), s.min.z(), s.max.x(), s.max.y(), s.max.z()}).dump() + "\n";
  for (const auto& e : scene.entities) {
    json je = {{"id", e.id},
               {"prompt", e.prompt},
               {"bbox", {e.bbox.min.x(), e.bbox.min.y(), e.bbox.min.z(), e.bbox.max.x(), e.bbox.max.y(), e.bbox.max.z()}},
               {"frozen", e.frozen},
               {"pinned", e.bbox_pinned}};
    out += "comment compsplat entity " + je.dump() + "\n";
  }
  out += "comment compsplat tags " + run_length_tags(g.entity_tags) + "\n";
  out += "element vertex " + std::to_string(g.size()) + "\n";
  for (const char* p : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0",
                        "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
    out += std::string("property float ") + p + "\n";
  out += "end_header\n";
  out.reserve(out.size() + g.size() * 17 * 4);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (int a = 0; a < 3; ++a) put_f32(out, g.positions[i][a]);
    for (int a = 0; a < 3; ++a) put_f32(out, 0.0);
    for (int a = 0; a < 3; ++a) put_f32(out, (g.colors[i][a] - 0.5) / kShC0);
    put_f32(out, logit(g.opacities[i]));
    for (int a = 0; a < 3; ++a) put_f32(out, g.log_scales[i][a]);
    for (int a = 0; a < 4; ++a) put_f32(out, g.rotations[i][a]);
  }
  write_file(path, out);
}

Scene import_gaussians_ply(const fs::path& path) {
  const PlyData ply = read_ply(path);
  Scene scene;
  std::vector<int> tags;
  bool has_tags = false;
  for (const auto& c : ply.comments) {
    const std::string prefix = "compsplat ";
    if (c.rfind(prefix, 0) != 0) continue;
    std::istringstream ss(c.substr(prefix.size()));
    std::string key;
    ss >> key;
    std::string rest;
    std::getline(ss, rest);
    try {
      if (key == "composition") {
        scene.composition_prompt = json::parse(rest).get<std::string>();
      } else if (key == "bbox_std") {
        const auto b = json::parse(rest).get<std::vector<double>>();
        if (b.size() != 6) throw ParseError("bbox_std needs 6 numbers");
        scene.bbox_std = {Vec3(b[0], b[1], b[2]), Vec3(b[3], b[4], b[5])};
      } else if (key == "entity") {
        const json je = json::parse(rest);
        EntityMeta e;
        e.id = je.at("id").get<int>();
        e.prompt = je.at("prompt").get<std::string>();
        const auto b = je.at("bbox").get<std::vector<double>>();
        if (b.size() != 6) throw ParseError("entity bbox needs 6 numbers");
        e.bbox = {Vec3(b[0], b[1], b[2]), Vec3(b[3], b[4], b[5])};
        e.frozen = je.value("frozen", false);
        e.bbox_pinned = je.value("pinned", false);
        scene.entities.push_back(e);
      } else if (key == "tags") {
        tags = expand_tags(rest);
        has_tags = true;
      }
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": bad '" + key + "' comment: " + e.what());
    }
  }

  static const char* names[] = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0",
                                "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"};
  int col[14];
  for (int k = 0; k < 14; ++k) {
    col[k] = ply.column(names[k]);
    if (col[k] < 0) throw ParseError(path.string() + ": missing property " + names[k]);
  }
  const std::size_t n = ply.vertex.count;
  if (has_tags && tags.size() != n)
    throw ParseError(path.string() + ": tag comment covers " + std::to_string(tags.size()) + " of " +
                     std::to_string(n) + " Gaussians");
  auto& g = scene.gaussians;
  g.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto v = [&](int k) { return ply.columns[static_cast<std::size_t>(col[k])][i]; };
    Gaussian x;
    x.position = Vec3(v(0), v(1), v(2));
    x.color = Vec3(v(3), v(4), v(5)) * kShC0 + Vec3::Constant(0.5);
    x.opacity = sigmoid(v(6));
    x.log_scale = Vec3(v(7), v(8), v(9));
    x.rotation = Vec4(v(10), v(11), v(12), v(13));
    x.entity = has_tags ? tags[i] : 1;
    g.push_back(x);
  }
  if (scene.entities.empty() && n > 0) {
    EntityMeta e;
    e.id = 1;
    scene.entities.push_back(e);
    compute_entity_bbox(scene, 1);
  }
  return scene;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  if (!img.all_finite()) throw InvalidArgument("image has non-finite values");
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.data.size());
  for (double v : img.data) out.push_back(static_cast<std::uint8_t>(std::clamp(std::floor(v * 255.0 + 0.5), 0.0, 255.0)));
  return out;
}

void write_image(const RgbImage& img, const fs::path& path) {
  const auto bytes = encode_ppm(img);
  write_file(path, std::string(bytes.begin(), bytes.end()));
}

void write_image(const RenderedImage& img, const fs::path& path) { write_image(img.rgb, path); }

namespace {

// Reads a netpbm-style header of `fields` whitespace-separated tokens
// (comments allowed) followed by exactly one whitespace byte.
std::vector<std::string> pnm_header(const std::string& buf, std::size_t fields, std::size_t& pos,
                                    const fs::path& path) {
  std::vector<std::string> out;
  pos = 0;
  while (out.size() < fields) {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) throw ParseError(path.string() + ": truncated image header");
    out.push_back(buf.substr(start, pos - start));
  }
  ++pos;
  return out;
}

}  // namespace

RgbImage read_ppm(const fs::path& path) {
  const std::string buf = read_file(path);
  std::size_t pos = 0;
  const auto h = pnm_header(buf, 4, pos, path);
  if (h[0] != "P6" || h[3] != "255") throw ParseError(path.string() + ": expected an 8-bit P6 image");
  RgbImage img(std::stoi(h[1]), std::stoi(h[2]));
  if (buf.size() - pos < img.data.size()) throw ParseError(path.string() + ": truncated pixel data");
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = static_cast<unsigned char>(buf[pos + i]) / 255.0;
  return img;
}

void write_pfm(const RgbImage& img, const fs::path& path) {
  std::string out = "PF\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
  // PFM rows run bottom to top.
  for (int y = img.height - 1; y >= 0; --y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) put_f32(out, img.at(x, y, c));
  write_file(path, out);
}

RgbImage read_pfm(const fs::path& path) {
  const std::string buf = read_file(path);
  std::size_t pos = 0;
  const auto h = pnm_header(buf, 4, pos, path);
  if (h[0] != "PF") throw ParseError(path.string() + ": expected a colour PFM image");
  if (std::stod(h[3]) >= 0.0) throw ParseError(path.string() + ": big-endian PFM is not supported");
  RgbImage img(std::stoi(h[1]), std::stoi(h[2]));
  if (buf.size() - pos < img.data.size() * 4) throw ParseError(path.string() + ": truncated pixel data");
  for (int y = img.height - 1; y >= 0; --y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float f;
        std::memcpy(&f, buf.data() + pos, 4);
        pos += 4;
        img.at(x, y, c) = f;
      }
  return img;
}

void save_target_views(const std::vector<TargetView>& views, const fs::path& dir) {
  fs::create_directories(dir);
  json list = json::array();
  for (std::size_t i = 0; i < views.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "view_%04zu.pfm", i);
    write_pfm(views[i].image, dir / name);
    json j = view_json(views[i].camera);
    j["prompt_id"] = views[i].prompt_id;
    j["file"] = name;
    list.push_back(j);
  }
  write_file(dir / "views.json", list.dump(2) + "\n");
}

std::vector<TargetView> load_target_views(const fs::path& dir) {
  const fs::path index = dir / "views.json";
  const std::string text = read_file(index);
  std::vector<TargetView> out;
  try {
    const json list = json::parse(text);
    for (const auto& j : list) {
      TargetView v;
      v.prompt_id = j.at("prompt_id").get<std::uint32_t>();
      const auto m = j.at("view").get<std::vector<double>>();
      if (m.size() != 16) throw ParseError(index.string() + ": view matrix needs 16 numbers");
      for (int r = 0; r < 4; ++r)
        for (int k = 0; k < 4; ++k) v.camera.world_to_view(r, k) = m[static_cast<std::size_t>(r * 4 + k)];
      v.camera.intr.fov_y_deg = j.at("fov_y_deg").get<double>();
      v.camera.intr.width = j.at("width").get<int>();
      v.camera.intr.height = j.at("height").get<int>();
      v.camera.intr.near = j.value("near", v.camera.intr.near);
      v.camera.intr.far = j.value("far", v.camera.intr.far);
      v.image = read_pfm(dir / j.at("file").get<std::string>());
      if (v.image.width != v.camera.intr.width || v.image.height != v.camera.intr.height)
        throw ParseError(index.string() + ": image size does not match its camera");
      out.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw ParseError(index.string() + ": " + e.what());
  }
  return out;
}

}  // namespace compsplat
