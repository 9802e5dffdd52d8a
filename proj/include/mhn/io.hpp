#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mhn/archgraph.hpp"
#include "mhn/builders.hpp"
#include "mhn/detect.hpp"
#include "mhn/engine.hpp"
#include "mhn/error.hpp"
#include "mhn/eval.hpp"
#include "mhn/tensor.hpp"

namespace mhn::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Binary tensors: "T4F1", four little-endian u32 dims (n, c, h, w), then
// n*c*h*w little-endian IEEE-754 binary32 values, row-major.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kTensorMagic{'T', '4', 'F', '1'};
inline constexpr std::array<char, 4> kWeightsMagic{'W', '4', 'F', '1'};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                     char((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw Error(ErrorKind::Io, "unexpected end of binary stream");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void expect_magic(std::istream& is, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  if (!is.read(got.data(), 4) || got != magic)
    throw Error(ErrorKind::Io, "bad magic, expected " + std::string(magic.data(), 4));
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

// Shortest representation that parses back to the same double.
inline std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Calls fn(line_number, fields) for every non-blank, non-comment line.
template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  int number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++number;
    const auto fields = split_ws(line);
    if (!fields.empty() && fields.front().front() != '#') fn(number, fields);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
}

[[noreturn]] inline void malformed(int line, const std::string& why) {
  throw Error(ErrorKind::MalformedLine, "line " + std::to_string(line) + ": " + why);
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor4& t) {
  os.write(kTensorMagic.data(), 4);
  const Shape4& s = t.shape();
  for (int d : {s.n, s.c, s.h, s.w}) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : t.data()) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline Tensor4 read_tensor(std::istream& is) {
  detail::expect_magic(is, kTensorMagic);
  std::uint32_t dims[4];
  for (auto& d : dims) {
    d = detail::get_u32(is);
    if (d == 0 || d > (1u << 24)) throw Error(ErrorKind::Io, "tensor dim out of range");
  }
  const Shape4 shape{int(dims[0]), int(dims[1]), int(dims[2]), int(dims[3])};
  if (shape.count() > (std::size_t{1} << 30)) throw Error(ErrorKind::Io, "tensor too large");
  std::vector<float> data(shape.count());
  for (float& v : data) {
    v = std::bit_cast<float>(detail::get_u32(is));
    if (!std::isfinite(v)) throw Error(ErrorKind::Io, "tensor contains a non-finite value");
  }
  return Tensor4(shape, std::move(data));
}

inline void save_tensor(const fs::path& path, const Tensor4& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  write_tensor(out, t);
}

inline Tensor4 load_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return read_tensor(in);
}

// ---------------------------------------------------------------------------
// Weight stores: "W4F1", u32 record count, then per record a u32 name
// length, the name bytes, the kernel tensor and the bias as a (1,1,1,out_c)
// tensor, both in the T4F1 layout. Records are in key order.
// ---------------------------------------------------------------------------

inline void write_weights(std::ostream& os, const WeightStore& w) {
  os.write(kWeightsMagic.data(), 4);
  detail::put_u32(os, static_cast<std::uint32_t>(w.size()));
  for (const auto& [key, cw] : w.entries()) {
    detail::put_u32(os, static_cast<std::uint32_t>(key.size()));
    os.write(key.data(), static_cast<std::streamsize>(key.size()));
    write_tensor(os, cw.kernel);
    write_tensor(os, Tensor4({1, 1, 1, static_cast<int>(cw.bias.size())}, cw.bias));
  }
}

inline WeightStore read_weights(std::istream& is) {
  detail::expect_magic(is, kWeightsMagic);
  const std::uint32_t count = detail::get_u32(is);
  WeightStore w;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = detail::get_u32(is);
    if (len == 0 || len > 4096) throw Error(ErrorKind::Io, "bad weight record name length");
    std::string key(len, '\0');
    if (!is.read(key.data(), len)) throw Error(ErrorKind::Io, "truncated weight record name");
    Tensor4 kernel = read_tensor(is);
    const Tensor4 bias = read_tensor(is);
    if (bias.size() != static_cast<std::size_t>(kernel.n()))
      throw Error(ErrorKind::Io, "bias of '" + key + "' does not match kernel");
    w.set(key, {std::move(kernel), std::vector<float>(bias.data().begin(), bias.data().end())});
  }
  return w;
}

inline void save_weights(const fs::path& path, const WeightStore& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  write_weights(out, w);
}

inline WeightStore load_weights(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return read_weights(in);
}

// ---------------------------------------------------------------------------
// Architecture text, one record per line:
//   arch <name>
//   node <id> <Op> [in=a,b] [k=HxW] [s=N] [d=N] [p=HxW] [c=N] [share=G]
//   output <name> node=<id> [trunk=<id>] [alias=<A>]
//   head <branch> conv=<id> cls=<id> reg=<id> anchors=<N>
//   rcnn <branch> source=<id> roi=HxW fc=<N>
// Omitted node keys take the NodeSpec defaults. '#' starts a comment line.
// ---------------------------------------------------------------------------

inline std::string write_graph(const ArchGraph& g) {
  std::ostringstream os;
  auto hw = [](Size2 s) { return std::to_string(s.h) + "x" + std::to_string(s.w); };
  os << "arch " << (g.name().empty() ? "unnamed" : g.name()) << "\n";
  for (const NodeSpec& n : g.nodes()) {
    os << "node " << n.id << " " << to_string(n.op);
    if (!n.inputs.empty()) {
      os << " in=";
      for (std::size_t i = 0; i < n.inputs.size(); ++i) os << (i ? "," : "") << n.inputs[i];
    }
    if (n.kernel != Size2{1, 1}) os << " k=" << hw(n.kernel);
    if (n.stride != 1) os << " s=" << n.stride;
    if (n.dilation != 1) os << " d=" << n.dilation;
    if (n.padding != Size2{0, 0}) os << " p=" << hw(n.padding);
    if (n.out_channels != 0) os << " c=" << n.out_channels;
    if (!n.share_group.empty()) os << " share=" << n.share_group;
    os << "\n";
  }
  for (const BranchOutput& o : g.outputs()) {
    os << "output " << o.name << " node=" << o.node << " trunk=" << o.trunk;
    if (!o.alias.empty()) os << " alias=" << o.alias;
    os << "\n";
  }
  for (const HeadBinding& h : g.heads())
    os << "head " << h.branch << " conv=" << h.conv << " cls=" << h.cls << " reg=" << h.reg
       << " anchors=" << h.anchors << "\n";
  if (const auto& rc = g.rcnn())
    os << "rcnn " << rc->branch << " source=" << rc->source << " roi=" << hw(rc->roi)
       << " fc=" << rc->fc_width << "\n";
  return os.str();
}

namespace detail {

class KeyValues {
 public:
  KeyValues(int line, const std::vector<std::string_view>& fields, std::size_t first)
      : line_(line) {
    for (std::size_t i = first; i < fields.size(); ++i) {
      const auto eq = fields[i].find('=');
      if (eq == std::string_view::npos || eq == 0)
        malformed(line, "expected key=value, got '" + std::string(fields[i]) + "'");
      const std::string key(fields[i].substr(0, eq));
      if (!kv_.emplace(key, std::string(fields[i].substr(eq + 1))).second)
        malformed(line, "duplicate key '" + key + "'");
    }
  }

  std::optional<std::string> take(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }

  std::string require(const std::string& key) {
    if (auto v = take(key)) return *v;
    malformed(line_, "missing key '" + key + "'");
  }

  int integer(const std::string& key, int fallback) {
    auto v = take(key);
    if (!v) return fallback;
    int out = 0;
    if (!parse_number(*v, out)) malformed(line_, "bad integer for '" + key + "'");
    return out;
  }

  Size2 pair(const std::string& key, Size2 fallback) {
    auto v = take(key);
    if (!v) return fallback;
    const auto x = v->find('x');
    Size2 out;
    if (x == std::string::npos || !parse_number(std::string_view(*v).substr(0, x), out.h) ||
        !parse_number(std::string_view(*v).substr(x + 1), out.w))
      malformed(line_, "bad HxW value for '" + key + "'");
    return out;
  }

  void finish() const {
    if (!kv_.empty()) malformed(line_, "unknown key '" + kv_.begin()->first + "'");
  }

 private:
  int line_;
  std::map<std::string, std::string> kv_;
};

}  // namespace detail

inline ArchGraph parse_graph(std::string_view text) {
  ArchGraph g;
  bool named = false;
  detail::for_each_line(text, [&](int line, const std::vector<std::string_view>& f) {
    const std::string_view kind = f.front();
    if (kind == "arch") {
      if (f.size() != 2 || named) detail::malformed(line, "expected one 'arch <name>' line");
      g.set_name(std::string(f[1]));
      named = true;
    } else if (kind == "node") {
      if (f.size() < 3) detail::malformed(line, "node needs an id and an op");
      NodeSpec n;
      n.id = std::string(f[1]);
      const auto op = parse_op(f[2]);
      if (!op) detail::malformed(line, "unknown op '" + std::string(f[2]) + "'");
      n.op = *op;
      detail::KeyValues kv(line, f, 3);
      if (auto in = kv.take("in")) {
        std::size_t pos = 0;
        while (pos <= in->size()) {
          const auto comma = in->find(',', pos);
          const std::string id = in->substr(pos, comma == std::string::npos ? std::string::npos
                                                                            : comma - pos);
          if (id.empty()) detail::malformed(line, "empty predecessor id");
          n.inputs.push_back(id);
          if (comma == std::string::npos) break;
          pos = comma + 1;
        }
      }
      n.kernel = kv.pair("k", n.kernel);
      n.stride = kv.integer("s", n.stride);
      n.dilation = kv.integer("d", n.dilation);
      n.padding = kv.pair("p", n.padding);
      n.out_channels = kv.integer("c", n.out_channels);
      n.share_group = kv.take("share").value_or("");
      kv.finish();
      try {
        g.add(std::move(n));
      } catch (const Error& e) {
        detail::malformed(line, e.what());
      }
    } else if (kind == "output") {
      if (f.size() < 3) detail::malformed(line, "output needs a name and node=");
      detail::KeyValues kv(line, f, 2);
      BranchOutput o;
      o.name = std::string(f[1]);
      o.node = kv.require("node");
      o.trunk = kv.take("trunk").value_or(o.node);
      o.alias = kv.take("alias").value_or("");
      kv.finish();
      g.add_output(o);
    } else if (kind == "head") {
      if (f.size() < 3) detail::malformed(line, "head needs a branch and its nodes");
      detail::KeyValues kv(line, f, 2);
      HeadBinding h;
      h.branch = std::string(f[1]);
      h.conv = kv.require("conv");
      h.cls = kv.require("cls");
      h.reg = kv.require("reg");
      h.anchors = kv.integer("anchors", 0);
      kv.finish();
      if (h.anchors < 1) detail::malformed(line, "head needs anchors >= 1");
      g.add_head(h);
    } else if (kind == "rcnn") {
      if (f.size() < 3) detail::malformed(line, "rcnn needs a branch and source=");
      detail::KeyValues kv(line, f, 2);
      RcnnHead rc;
      rc.branch = std::string(f[1]);
      rc.source = kv.require("source");
      rc.roi = kv.pair("roi", rc.roi);
      rc.fc_width = kv.integer("fc", rc.fc_width);
      kv.finish();
      g.set_rcnn(rc);
    } else {
      detail::malformed(line, "unknown record '" + std::string(kind) + "'");
    }
  });
  return g;
}

inline ArchGraph load_graph(const fs::path& path) { return parse_graph(detail::read_text(path)); }
inline void save_graph(const fs::path& path, const ArchGraph& g) {
  detail::write_text(path, write_graph(g));
}

// ---------------------------------------------------------------------------
// KITTI label lines:
//   type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y [score]
// ---------------------------------------------------------------------------

struct AnnotationRecord {
  std::string image_id;
  std::string label;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  Box box;
  std::array<double, 3> dimensions{};
  std::array<double, 3> location{};
  double rotation_y = 0.0;
  std::optional<double> score;

  bool positive() const { return label == "Pedestrian"; }
  bool ignore() const { return label == "DontCare"; }

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

namespace detail {

inline AnnotationRecord parse_kitti_fields(int line, const std::vector<std::string_view>& f,
                                           std::size_t first, std::string image_id) {
  const std::size_t n = f.size() - first;
  if (n != 15 && n != 16)
    malformed(line, "expected 15 or 16 KITTI fields, got " + std::to_string(n));
  double v[15];
  for (std::size_t i = 1; i < 15; ++i) {
    if (i == 2) continue;
    if (!parse_number(f[first + i], v[i]) || !std::isfinite(v[i]))
      malformed(line, "bad number '" + std::string(f[first + i]) + "'");
  }
  AnnotationRecord r;
  r.image_id = std::move(image_id);
  r.label = std::string(f[first]);
  r.truncation = v[1];
  if (!parse_number(f[first + 2], r.occlusion)) malformed(line, "bad occlusion flag");
  r.alpha = v[3];
  r.box = {v[4], v[5], v[6], v[7]};
  r.dimensions = {v[8], v[9], v[10]};
  r.location = {v[11], v[12], v[13]};
  r.rotation_y = v[14];
  if (n == 16) {
    double s = 0.0;
    if (!parse_number(f[first + 15], s) || !std::isfinite(s)) malformed(line, "bad score");
    r.score = s;
  }
  if (!(r.box.y2 > r.box.y1)) malformed(line, "box needs y2 > y1");
  return r;
}

}  // namespace detail

inline std::vector<AnnotationRecord> parse_kitti_labels(std::string_view text,
                                                        const std::string& image_id = {}) {
  std::vector<AnnotationRecord> out;
  detail::for_each_line(text, [&](int line, const std::vector<std::string_view>& f) {
    out.push_back(detail::parse_kitti_fields(line, f, 0, image_id));
  });
  return out;
}

inline std::string write_kitti_line(const AnnotationRecord& r) {
  using detail::num;
  std::string s = r.label + " " + num(r.truncation) + " " + std::to_string(r.occlusion) + " " +
                  num(r.alpha) + " " + num(r.box.x1) + " " + num(r.box.y1) + " " + num(r.box.x2) +
                  " " + num(r.box.y2);
  for (double d : r.dimensions) s += " " + num(d);
  for (double d : r.location) s += " " + num(d);
  s += " " + num(r.rotation_y);
  if (r.score) s += " " + num(*r.score);
  return s;
}

inline std::string write_kitti_labels(const std::vector<AnnotationRecord>& records) {
  std::string out;
  for (const AnnotationRecord& r : records) out += write_kitti_line(r) + "\n";
  return out;
}

using GroundTruthIndex = std::map<std::string, std::vector<AnnotationRecord>>;

/// Single-file ground truth: each line is an image id followed by a KITTI
/// label line.
inline GroundTruthIndex parse_ground_truth(std::string_view text) {
  GroundTruthIndex out;
  detail::for_each_line(text, [&](int line, const std::vector<std::string_view>& f) {
    const std::string id(f.front());
    out[id].push_back(detail::parse_kitti_fields(line, f, 1, id));
  });
  return out;
}

inline std::string write_ground_truth(const GroundTruthIndex& gt) {
  std::string out;
  for (const auto& [id, records] : gt)
    for (const AnnotationRecord& r : records) out += id + " " + write_kitti_line(r) + "\n";
  return out;
}

/// A directory of per-image KITTI label files (<image_id>.txt, empty files
/// count as images without pedestrians) or a single image-prefixed file.
inline GroundTruthIndex load_ground_truth(const fs::path& path) {
  if (!fs::is_directory(path)) return parse_ground_truth(detail::read_text(path));
  GroundTruthIndex out;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    const std::string id = entry.path().stem().string();
    try {
      out[id] = parse_kitti_labels(detail::read_text(entry.path()), id);
    } catch (const Error& e) {
      throw Error(e.kind(), entry.path().filename().string() + ": " + e.detail());
    }
  }
  return out;
}

/// Pedestrians become active boxes, DontCare regions ignore boxes, other
/// classes are dropped.
inline std::vector<GroundTruthBox> to_ground_truth(const std::vector<AnnotationRecord>& records) {
  std::vector<GroundTruthBox> out;
  for (const AnnotationRecord& r : records) {
    if (r.positive()) out.push_back({r.box, false, r.occlusion});
    else if (r.ignore()) out.push_back({r.box, true, r.occlusion});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detection dump: `image_id x1 y1 x2 y2 s_f s_rcnn s_mhn branch`, six
// decimals.
// ---------------------------------------------------------------------------

struct DetectionRecord {
  std::string image_id;
  Detection det;
};

inline std::string write_detection_line(const std::string& image_id, const Detection& d) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s %.6f %.6f %.6f %.6f %.6f %.6f %.6f %d", image_id.c_str(),
                d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.s_f, d.s_rcnn, d.s_mhn, d.branch);
  return buf;
}

inline std::string write_detections(const std::string& image_id,
                                    const std::vector<Detection>& dets) {
  std::string out;
  for (const Detection& d : dets) out += write_detection_line(image_id, d) + "\n";
  return out;
}

inline std::vector<DetectionRecord> parse_detections(std::string_view text) {
  std::vector<DetectionRecord> out;
  detail::for_each_line(text, [&](int line, const std::vector<std::string_view>& f) {
    if (f.size() != 9)
      detail::malformed(line, "expected 9 detection fields, got " + std::to_string(f.size()));
    double v[7];
    for (int i = 0; i < 7; ++i)
      if (!detail::parse_number(f[1 + i], v[i]) || !std::isfinite(v[i]))
        detail::malformed(line, "bad number '" + std::string(f[1 + i]) + "'");
    int branch = 0;
    if (!detail::parse_number(f[8], branch)) detail::malformed(line, "bad branch index");
    DetectionRecord r;
    r.image_id = std::string(f[0]);
    r.det.box = {v[0], v[1], v[2], v[3]};
    r.det.s_f = v[4];
    r.det.s_rcnn = v[5];
    r.det.s_mhn = v[6];
    r.det.branch = branch;
    out.push_back(r);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Run configuration (JSON).
// ---------------------------------------------------------------------------

struct RunConfig {
  Arch arch = Arch::Mhn;
  BackboneSpec backbone = toy_backbone();
  int head_mid_channels = 0;
  PipelineConfig pipeline;
  bool rcnn = true;
  Size2 roi{7, 7};
  int fc_width = 256;
  double eval_iou = 0.5;
  std::uint64_t seed = 17;
  std::string weights_path;
  std::string input_path;
  std::string output_path;

  friend bool operator==(const RunConfig& a, const RunConfig& b) {
    const auto& pa = a.pipeline;
    const auto& pb = b.pipeline;
    return a.arch == b.arch && a.backbone == b.backbone &&
           a.head_mid_channels == b.head_mid_channels && pa.anchors.s_min == pb.anchors.s_min &&
           pa.anchors.s_max == pb.anchors.s_max && pa.anchors.n_anchors == pb.anchors.n_anchors &&
           pa.anchors.aspect_ratio == pb.anchors.aspect_ratio &&
           pa.anchors.branch_split == pb.anchors.branch_split && pa.lambda == pb.lambda &&
           pa.top_k == pb.top_k && pa.nms_iou == pb.nms_iou && pa.max_out == pb.max_out &&
           a.rcnn == b.rcnn && a.roi == b.roi && a.fc_width == b.fc_width &&
           a.eval_iou == b.eval_iou && a.seed == b.seed && a.weights_path == b.weights_path &&
           a.input_path == b.input_path && a.output_path == b.output_path;
  }
};

inline nlohmann::json backbone_to_json(const BackboneSpec& b) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const ConvBlock& blk : b.blocks) blocks.push_back({blk.convs, blk.channels});
  return {{"blocks", blocks},
          {"split", b.split_block_index},
          {"kernel", {b.kernel.h, b.kernel.w}},
          {"in_channels", b.in_channels},
          {"lateral_channels", b.lateral_channels}};
}

inline BackboneSpec backbone_from_json(const nlohmann::json& j) {
  try {
    BackboneSpec b;
    b.blocks.clear();
    for (const auto& blk : j.at("blocks")) b.blocks.push_back({blk.at(0).get<int>(), blk.at(1).get<int>()});
    b.split_block_index = j.at("split").get<int>();
    if (j.contains("kernel")) b.kernel = {j["kernel"].at(0).get<int>(), j["kernel"].at(1).get<int>()};
    b.in_channels = j.value("in_channels", 3);
    b.lateral_channels = j.value("lateral_channels", 0);
    check_backbone(b);
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("backbone: ") + e.what());
  }
}

inline BackboneSpec load_backbone(const fs::path& path) {
  try {
    return backbone_from_json(nlohmann::json::parse(detail::read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

inline std::string write_run_config(const RunConfig& c) {
  const AnchorConfig& a = c.pipeline.anchors;
  nlohmann::json j = {
      {"arch", std::string(to_string(c.arch))},
      {"backbone", backbone_to_json(c.backbone)},
      {"head_mid_channels", c.head_mid_channels},
      {"anchors",
       {{"smin", a.s_min}, {"smax", a.s_max}, {"n", a.n_anchors}, {"ratio", a.aspect_ratio},
        {"split", a.branch_split}}},
      {"lambda", c.pipeline.lambda},
      {"top_k", c.pipeline.top_k},
      {"nms_iou", c.pipeline.nms_iou},
      {"max_out", c.pipeline.max_out},
      {"rcnn", {{"enabled", c.rcnn}, {"roi", {c.roi.h, c.roi.w}}, {"fc_width", c.fc_width}}},
      {"eval_iou", c.eval_iou},
      {"seed", c.seed},
      {"paths", {{"weights", c.weights_path}, {"input", c.input_path}, {"out", c.output_path}}},
  };
  return j.dump(2) + "\n";
}

inline void check_run_config(const RunConfig& c) {
  auto bad = [](const std::string& why) { throw Error(ErrorKind::InvalidConfig, why); };
  check_backbone(c.backbone);
  const AnchorConfig& a = c.pipeline.anchors;
  if (!(a.s_min > 0.0) || !(a.s_min <= a.s_max)) bad("anchors need 0 < smin <= smax");
  if (a.n_anchors < 1) bad("anchors.n must be >= 1");
  if (!(a.aspect_ratio > 0.0)) bad("anchors.ratio must be positive");
  if (!(c.pipeline.lambda >= 0.0)) bad("lambda must be >= 0");
  if (c.pipeline.top_k < 1 || c.pipeline.max_out < 1) bad("top_k and max_out must be >= 1");
  if (!(c.pipeline.nms_iou > 0.0 && c.pipeline.nms_iou < 1.0)) bad("nms_iou must be in (0, 1)");
  if (!(c.eval_iou > 0.0 && c.eval_iou < 1.0)) bad("eval_iou must be in (0, 1)");
  if (c.roi.h < 1 || c.roi.w < 1 || c.fc_width < 1) bad("rcnn roi and fc_width must be positive");
  if (c.head_mid_channels < 0) bad("head_mid_channels must be >= 0");
}

/// Parses and range-checks a config; paths are taken verbatim.
inline RunConfig parse_run_config(std::string_view text) {
  RunConfig c;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (j.contains("arch")) {
      const auto arch = mhn::parse_arch(j["arch"].get<std::string>());
      if (!arch) throw Error(ErrorKind::InvalidConfig, "unknown arch");
      c.arch = *arch;
    }
    if (j.contains("backbone")) c.backbone = backbone_from_json(j["backbone"]);
    c.head_mid_channels = j.value("head_mid_channels", c.head_mid_channels);
    if (j.contains("anchors")) {
      const auto& a = j["anchors"];
      AnchorConfig& ac = c.pipeline.anchors;
      ac.s_min = a.value("smin", ac.s_min);
      ac.s_max = a.value("smax", ac.s_max);
      ac.n_anchors = a.value("n", ac.n_anchors);
      ac.aspect_ratio = a.value("ratio", ac.aspect_ratio);
      if (a.contains("split")) ac.branch_split = a["split"].get<std::vector<int>>();
    }
    c.pipeline.lambda = j.value("lambda", c.pipeline.lambda);
    c.pipeline.top_k = j.value("top_k", c.pipeline.top_k);
    c.pipeline.nms_iou = j.value("nms_iou", c.pipeline.nms_iou);
    c.pipeline.max_out = j.value("max_out", c.pipeline.max_out);
    if (j.contains("rcnn")) {
      const auto& r = j["rcnn"];
      c.rcnn = r.value("enabled", c.rcnn);
      if (r.contains("roi")) c.roi = {r["roi"].at(0).get<int>(), r["roi"].at(1).get<int>()};
      c.fc_width = r.value("fc_width", c.fc_width);
    }
    c.eval_iou = j.value("eval_iou", c.eval_iou);
    c.seed = j.value("seed", c.seed);
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      c.weights_path = p.value("weights", "");
      c.input_path = p.value("input", "");
      c.output_path = p.value("out", "");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, e.what());
  }
  check_run_config(c);
  return c;
}

/// Loads a config file. Relative paths resolve against the file's
/// directory; the weights and input files and the output directory must
/// exist.
inline RunConfig load_run_config(const fs::path& path) {
  RunConfig c = parse_run_config(detail::read_text(path));
  const fs::path base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.weights_path);
  resolve(c.input_path);
  resolve(c.output_path);
  for (const std::string* p : {&c.weights_path, &c.input_path})
    if (!p->empty() && !fs::exists(*p))
      throw Error(ErrorKind::InvalidConfig, "path does not exist: " + *p);
  if (!c.output_path.empty()) {
    const fs::path dir = fs::path(c.output_path).parent_path();
    if (!dir.empty() && !fs::is_directory(dir))
      throw Error(ErrorKind::InvalidConfig, "output directory does not exist: " + dir.string());
  }
  return c;
}

}  // namespace mhn::io
