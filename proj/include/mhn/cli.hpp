#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mhn/mhn.hpp"

namespace mhn::cli {

enum class LogLevel { Quiet, Info, Debug };

// MHN_LOG=quiet|info|debug; unset or unknown means info.
inline LogLevel log_level_from_env() {
  const char* v = std::getenv("MHN_LOG");
  if (!v) return LogLevel::Info;
  const std::string s(v);
  if (s == "quiet") return LogLevel::Quiet;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

class Log {
 public:
  Log(std::ostream& err, LogLevel level) : err_(err), level_(level) {}
  void info(const std::string& msg) const {
    if (level_ != LogLevel::Quiet) err_ << "[info] " << msg << "\n";
  }
  void debug(const std::string& msg) const {
    if (level_ == LogLevel::Debug) err_ << "[debug] " << msg << "\n";
  }
  void error(const std::string& msg) const { err_ << "error: " << msg << "\n"; }

 private:
  std::ostream& err_;
  LogLevel level_;
};

namespace detail {

inline const std::map<std::string, Arch>& arch_names() {
  static const std::map<std::string, Arch> m{
      {"mhn-noskip", Arch::MhnNoskip}, {"mhn", Arch::Mhn}, {"mhn-d", Arch::MhnD}};
  return m;
}

inline Size2 parse_hw(const std::string& s) {
  const auto x = s.find('x');
  Size2 out;
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    out.h = std::stoi(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    out.w = std::stoi(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw CLI::ValidationError("expected HxW, got '" + s + "'");
  }
  if (out.h < 1 || out.w < 1) throw CLI::ValidationError("HxW needs positive sizes");
  return out;
}

inline const CLI::Validator& hw_check() {
  static const CLI::Validator v(
      [](std::string& s) {
        try {
          parse_hw(s);
        } catch (const CLI::ValidationError& e) {
          return std::string(e.what());
        }
        return std::string();
      },
      "HxW");
  return v;
}

// Real number strictly inside (0, 1).
inline const CLI::Validator& open_unit() {
  static const CLI::Validator v(
      [](std::string& s) {
        double x = 0.0;
        if (!io::detail::parse_number(s, x) || !(x > 0.0 && x < 1.0))
          return "value " + s + " not in (0, 1)";
        return std::string();
      },
      "(0,1)");
  return v;
}

struct BackboneFlags {
  std::string preset;
  std::string config;

  void add(CLI::App* cmd, const std::string& default_preset) {
    preset = default_preset;
    cmd->add_option("--backbone", preset, "Backbone preset")
        ->check(CLI::IsMember({"vgg16", "toy"}));
    cmd->add_option("--backbone-config", config, "Backbone JSON file (overrides --backbone)")
        ->check(CLI::ExistingFile);
  }

  BackboneSpec resolve() const {
    if (!config.empty()) return io::load_backbone(config);
    return preset == "toy" ? toy_backbone() : vgg16_backbone();
  }
};

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot write " + path);
  f << text;
  if (!f) throw Error(ErrorKind::Io, "write failed for " + path);
}

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------

struct DescribeCmd {
  std::string arch = "mhn";
  BackboneFlags backbone;
  bool heads = false;
  int anchors = 3;
  bool rcnn = false;
  std::string roi = "7x7";
  int fc = 256;
  std::string out;

  void add(CLI::App& app) {
    CLI::App* c = app.add_subcommand("describe", "Build an architecture and print its graph");
    c->add_option("--arch", arch, "Architecture")->check(CLI::IsMember(arch_names()));
    backbone.add(c, "vgg16");
    c->add_flag("--heads", heads, "Attach the per-branch prediction heads");
    c->add_option("--anchors-per-branch", anchors, "Anchors per branch for --heads")
        ->check(CLI::PositiveNumber);
    c->add_flag("--rcnn", rcnn, "Declare the second-stage head");
    c->add_option("--roi", roi, "ROI pooling grid")->check(hw_check());
    c->add_option("--fc", fc, "Second-stage fc width")->check(CLI::PositiveNumber);
    c->add_option("--out", out, "Output file (default stdout)");
  }

  int run(std::ostream& o, const Log& log) const {
    ArchGraph g = build(arch_names().at(arch), backbone.resolve());
    if (heads) g = attach_heads(g, HeadSpec{anchors, {}, 0});
    if (rcnn) g = attach_rcnn_head(g, parse_hw(roi), fc);
    const ValidationReport report = validate(g);
    if (!report.ok()) throw Error(ErrorKind::InvalidGraph, report.violations.front());
    log.info(arch + ": " + std::to_string(g.size()) + " nodes");
    write_output(out, io::write_graph(g), o);
    return 0;
  }
};

struct AnalyzeCmd {
  std::string arch = "mhn";
  BackboneFlags backbone;
  std::string graph;

  void add(CLI::App& app) {
    CLI::App* c =
        app.add_subcommand("analyze", "Print stride, receptive field and depth per branch");
    c->add_option("--arch", arch, "Architecture")->check(CLI::IsMember(arch_names()));
    backbone.add(c, "vgg16");
    c->add_option("--graph", graph, "Analyze an architecture file instead of a builder")
        ->check(CLI::ExistingFile);
  }

  int run(std::ostream& o, const Log& log) const {
    const ArchGraph g = graph.empty() ? build(arch_names().at(arch), backbone.resolve())
                                      : io::load_graph(graph);
    const ValidationReport report = validate(g);
    for (const std::string& v : report.violations) log.info("violation: " + v);
    if (!report.ok()) throw Error(ErrorKind::InvalidGraph, report.violations.front());
    const auto rows = branch_report(g);
    o << "arch " << g.name() << "\n" << format_branch_report(rows);
    for (const BranchRow& r : rows)
      o << "branch=" << r.name << " alias=" << (r.alias.empty() ? "-" : r.alias)
        << " stride=" << r.stride << " rf=" << r.rf.h << "x" << r.rf.w
        << " depth=" << r.conv_depth << " out_rf=" << r.out_rf.h << "x" << r.out_rf.w
        << " out_depth=" << r.out_conv_depth << "\n";
    return 0;
  }
};

struct AnchorsCmd {
  AnchorConfig cfg;
  CLI::App* cmd = nullptr;

  void add(CLI::App& app) {
    CLI::App* c = cmd = app.add_subcommand("anchors", "Print the anchor scale table");
    c->add_option("--smin", cfg.s_min, "Smallest anchor height bound")->check(CLI::PositiveNumber);
    c->add_option("--smax", cfg.s_max, "Largest anchor height bound")->check(CLI::PositiveNumber);
    c->add_option("--n", cfg.n_anchors, "Number of anchors")->check(CLI::PositiveNumber);
    c->add_option("--ratio", cfg.aspect_ratio, "Width over height")->check(CLI::PositiveNumber);
    c->add_option("--split", cfg.branch_split,
                  "Anchors per branch, smallest first (default: even thirds of --n)")
        ->delimiter(',')
        ->check(CLI::NonNegativeNumber);
  }

  int run(std::ostream& o, const Log&) const {
    AnchorConfig c = cfg;
    if (cmd->count("--split") == 0) c.branch_split = even_split(c.n_anchors);
    const AnchorSet set = make_anchor_set(c);
    char line[160];
    std::snprintf(line, sizeof line, "%3s %6s %12s %12s\n", "n", "branch", "height", "width");
    o << line;
    for (std::size_t k = 0; k < set.anchors.size(); ++k) {
      const Anchor& a = set.anchors[k];
      std::snprintf(line, sizeof line, "%3zu %6d %12.6f %12.6f\n", k + 1, a.branch, a.height,
                    a.width);
      o << line;
    }
    for (std::size_t k = 0; k < set.anchors.size(); ++k)
      o << "anchor=" << k + 1 << " branch=" << set.anchors[k].branch
        << " height=" << fixed(set.anchors[k].height) << " width=" << fixed(set.anchors[k].width)
        << "\n";
    return 0;
  }
};

struct InferCmd {
  CLI::App* cmd = nullptr;
  std::string config;
  std::string arch = "mhn";
  BackboneFlags backbone;
  std::string weights;
  std::string save_weights;
  std::string input;
  std::string synthetic = "64x64";
  std::string image_id;
  std::string out;
  std::uint64_t seed = 17;
  PipelineConfig pipeline;
  bool no_rcnn = false;
  std::string roi = "7x7";
  int fc = 256;

  void add(CLI::App& app) {
    cmd = app.add_subcommand("infer", "Run the detector and write a detection dump");
    CLI::App* c = cmd;
    c->add_option("--config", config, "Run configuration JSON; flags given here override it")
        ->check(CLI::ExistingFile);
    c->add_option("--arch", arch, "Architecture")->check(CLI::IsMember(arch_names()));
    backbone.add(c, "toy");
    c->add_option("--weights", weights, "Weight file (default: seeded Gaussian init)")
        ->check(CLI::ExistingFile);
    c->add_option("--save-weights", save_weights, "Write the weights used to this file");
    c->add_option("--input", input, "Input image tensor (T4F1, 1xCxHxW)")
        ->check(CLI::ExistingFile);
    c->add_option("--synthetic", synthetic, "Seeded random input of size HxW when no --input")
        ->check(hw_check());
    c->add_option("--image-id", image_id, "Image id in the dump (default: input stem)");
    c->add_option("--out", out, "Detection dump file (default stdout)");
    c->add_option("--seed", seed, "Seed for weight init and synthetic input");
    c->add_option("--lambda", pipeline.lambda, "Weight of the first-stage score")
        ->check(CLI::NonNegativeNumber);
    c->add_option("--top-k", pipeline.top_k, "Proposals kept for the second stage")
        ->check(CLI::PositiveNumber);
    c->add_option("--nms", pipeline.nms_iou, "NMS IoU threshold")
        ->check(open_unit());
    c->add_option("--max-out", pipeline.max_out, "Maximum detections")
        ->check(CLI::PositiveNumber);
    c->add_option("--smin", pipeline.anchors.s_min, "Smallest anchor height bound")
        ->check(CLI::PositiveNumber);
    c->add_option("--smax", pipeline.anchors.s_max, "Largest anchor height bound")
        ->check(CLI::PositiveNumber);
    c->add_option("--n", pipeline.anchors.n_anchors, "Number of anchors")
        ->check(CLI::PositiveNumber);
    c->add_option("--ratio", pipeline.anchors.aspect_ratio, "Anchor width over height")
        ->check(CLI::PositiveNumber);
    c->add_option("--split", pipeline.anchors.branch_split, "Anchors per branch")
        ->delimiter(',')
        ->check(CLI::NonNegativeNumber);
    c->add_flag("--no-rcnn", no_rcnn, "Skip the second stage (s_rcnn = s_mhn)");
    c->add_option("--roi", roi, "ROI pooling grid")->check(hw_check());
    c->add_option("--fc", fc, "Second-stage fc width")->check(CLI::PositiveNumber);
  }

  bool given(const char* flag) const { return cmd->count(flag) > 0; }

  io::RunConfig resolve() const {
    io::RunConfig c;
    if (!config.empty()) c = io::load_run_config(config);
    if (config.empty() || given("--arch")) c.arch = arch_names().at(arch);
    if (config.empty() || given("--backbone") || given("--backbone-config"))
      c.backbone = backbone.resolve();
    if (given("--weights")) c.weights_path = weights;
    if (given("--input")) c.input_path = input;
    if (given("--out")) c.output_path = out;
    if (config.empty() || given("--seed")) c.seed = seed;
    PipelineConfig& p = c.pipeline;
    if (config.empty()) p = pipeline;
    if (given("--lambda")) p.lambda = pipeline.lambda;
    if (given("--top-k")) p.top_k = pipeline.top_k;
    if (given("--nms")) p.nms_iou = pipeline.nms_iou;
    if (given("--max-out")) p.max_out = pipeline.max_out;
    if (given("--smin")) p.anchors.s_min = pipeline.anchors.s_min;
    if (given("--smax")) p.anchors.s_max = pipeline.anchors.s_max;
    if (given("--n")) p.anchors.n_anchors = pipeline.anchors.n_anchors;
    if (given("--ratio")) p.anchors.aspect_ratio = pipeline.anchors.aspect_ratio;
    if (given("--split")) p.anchors.branch_split = pipeline.anchors.branch_split;
    else if (given("--n")) p.anchors.branch_split = even_split(p.anchors.n_anchors);
    if (no_rcnn) c.rcnn = false;
    if (config.empty() || given("--roi")) c.roi = parse_hw(roi);
    if (config.empty() || given("--fc")) c.fc_width = fc;
    io::check_run_config(c);
    return c;
  }

  int run(std::ostream& o, const Log& log) const {
    const io::RunConfig c = resolve();
    ArchGraph g = build(c.arch, c.backbone);
    g = attach_heads(g, HeadSpec{0, c.pipeline.anchors.branch_split, c.head_mid_channels});
    if (c.rcnn) g = attach_rcnn_head(g, c.roi, c.fc_width);
    log.debug("graph " + g.name() + " with " + std::to_string(g.size()) + " nodes");

    const WeightStore w =
        c.weights_path.empty() ? init_weights(g, c.seed) : io::load_weights(c.weights_path);
    if (!save_weights.empty()) io::save_weights(save_weights, w);

    Tensor4 image;
    std::string id = image_id;
    if (!c.input_path.empty()) {
      image = io::load_tensor(c.input_path);
      if (id.empty()) id = std::filesystem::path(c.input_path).stem().string();
    } else {
      const Size2 hw = parse_hw(synthetic);
      image = Tensor4({1, c.backbone.in_channels, hw.h, hw.w});
      std::mt19937_64 rng(c.seed + 1);
      std::uniform_real_distribution<float> unit(0.0f, 1.0f);
      for (float& v : image.data()) v = unit(rng);
      if (id.empty()) id = "synthetic";
    }
    log.debug("input " + image.shape().str());

    const std::vector<Detection> dets = detect_pipeline(g, w, image, c.pipeline);
    write_output(c.output_path, io::write_detections(id, dets), o);
    log.info("detections=" + std::to_string(dets.size()));
    if (!c.output_path.empty() && c.output_path != "-")
      o << "detections=" << dets.size() << "\n";
    return 0;
  }
};

struct EvalCmd {
  std::string dets;
  std::string gt;
  std::string metric = "ap";
  std::vector<std::string> subsets{"all"};
  double iou_thr = 0.5;
  int ap_points = 11;
  int max_occlusion = 3;

  void add(CLI::App& app) {
    CLI::App* c = app.add_subcommand("eval", "Score a detection dump against ground truth");
    c->add_option("--dets", dets, "Detection dump")->required()->check(CLI::ExistingFile);
    c->add_option("--gt", gt, "Ground truth: KITTI label directory or image-prefixed file")
        ->required()
        ->check(CLI::ExistingPath);
    c->add_option("--metric", metric, "ap or mr")->check(CLI::IsMember({"ap", "mr"}));
    std::vector<std::string> names;
    for (const auto& [name, f] : named_subsets()) names.push_back(name);
    c->add_option("--subset", subsets, "Height subset, repeatable")->check(CLI::IsMember(names));
    c->add_option("--iou", iou_thr, "Match IoU threshold")->check(open_unit());
    c->add_option("--ap-points", ap_points, "Interpolated recall points")
        ->check(CLI::Range(2, 1000));
    c->add_option("--max-occlusion", max_occlusion, "Occlusion levels above this are ignored")
        ->check(CLI::Range(0, 3));
  }

  int run(std::ostream& o, const Log& log) const {
    const auto records = io::parse_detections(io::detail::read_text(dets));
    const io::GroundTruthIndex index = io::load_ground_truth(gt);

    std::set<std::string> ids;
    for (const auto& [id, r] : index) ids.insert(id);
    for (const auto& r : records) ids.insert(r.image_id);
    std::map<std::string, std::vector<ScoredBox>> by_image;
    for (const auto& r : records) by_image[r.image_id].push_back({r.det.box, r.det.s_f});
    log.debug(std::to_string(records.size()) + " detections over " + std::to_string(ids.size()) +
              " images");

    const std::string key = metric == "ap" ? "AP" : "MR";
    std::vector<std::string> lines;
    char row[200];
    std::snprintf(row, sizeof row, "%-12s %-6s %10s %6s %8s\n", "subset", "metric", "value",
                  "n_gt", "images");
    o << row;
    for (const std::string& name : subsets) {
      SubsetFilter f = named_subsets().at(name);
      f.max_occlusion = std::min(f.max_occlusion, max_occlusion);
      std::vector<ImageEval> images;
      for (const std::string& id : ids) {
        ImageEval img;
        if (auto it = by_image.find(id); it != by_image.end()) img.detections = it->second;
        if (auto it = index.find(id); it != index.end())
          img.ground_truth = subset_filter(io::to_ground_truth(it->second), f);
        images.push_back(std::move(img));
      }
      const EvalCurve curve = build_curve(images, iou_thr);
      if (curve.n_gt == 0)
        throw Error(ErrorKind::NoGroundTruth, "subset '" + name + "' has no active ground truth");
      const double value = metric == "ap" ? average_precision(curve, ap_points)
                                          : log_average_miss_rate(curve, curve.n_images);
      std::snprintf(row, sizeof row, "%-12s %-6s %10.6f %6d %8d\n", name.c_str(), key.c_str(),
                    value, curve.n_gt, curve.n_images);
      o << row;
      lines.push_back(key + "=" + fixed(value) + " subset=" + name + " iou=" + fixed(iou_thr, 2) +
                      " n_gt=" + std::to_string(curve.n_gt) +
                      " n_images=" + std::to_string(curve.n_images));
    }
    for (const std::string& l : lines) o << l << "\n";
    return 0;
  }
};

}  // namespace detail

/// Entry point. Exit codes: 0 success (including --help), 1 runtime
/// failure, 2 bad command line.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const Log log(err, log_level_from_env());
  CLI::App app("Multi-branch pedestrian detector toolkit", "mhn");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  detail::DescribeCmd describe;
  detail::AnalyzeCmd analyze;
  detail::AnchorsCmd anchors;
  detail::InferCmd infer;
  detail::EvalCmd eval;
  describe.add(app);
  analyze.add(app);
  anchors.add(app);
  infer.add(app);
  eval.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "describe") return describe.run(out, log);
    if (name == "analyze") return analyze.run(out, log);
    if (name == "anchors") return anchors.run(out, log);
    if (name == "infer") return infer.run(out, log);
    if (name == "eval") return eval.run(out, log);
    return 2;
  } catch (const Error& e) {
    log.error(e.what());
    return 1;
  } catch (const std::exception& e) {
    log.error(e.what());
    return 1;
  }
}

}  // namespace mhn::cli
