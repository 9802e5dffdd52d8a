#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mhn {

enum class ErrorKind {
  InvalidGraph,
  NonIntegerStride,
  UnknownOutput,
  InvalidBackbone,
  NoOutputs,
  ShapeMismatch,
  MissingWeights,
  DegenerateROI,
  InvalidRange,
  SplitMismatch,
  NonFiniteRegression,
  NoGroundTruth,
  MalformedLine,
  InvalidConfig,
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidGraph: return "InvalidGraph";
    case ErrorKind::NonIntegerStride: return "NonIntegerStride";
    case ErrorKind::UnknownOutput: return "UnknownOutput";
    case ErrorKind::InvalidBackbone: return "InvalidBackbone";
    case ErrorKind::NoOutputs: return "NoOutputs";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::MissingWeights: return "MissingWeights";
    case ErrorKind::DegenerateROI: return "DegenerateROI";
    case ErrorKind::InvalidRange: return "InvalidRange";
    case ErrorKind::SplitMismatch: return "SplitMismatch";
    case ErrorKind::NonFiniteRegression: return "NonFiniteRegression";
    case ErrorKind::NoGroundTruth: return "NoGroundTruth";
    case ErrorKind::MalformedLine: return "MalformedLine";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

// Single exception type for the library. `node()` names the graph node the
// failure is attributed to, when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, std::string node = {})
      : std::runtime_error(format(kind, what, node)),
        kind_(kind),
        node_(std::move(node)),
        detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& node() const noexcept { return node_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  static std::string format(ErrorKind kind, const std::string& what,
                            const std::string& node) {
    std::string out(to_string(kind));
    if (!node.empty()) out += " at node '" + node + "'";
    out += ": " + what;
    return out;
  }

  ErrorKind kind_;
  std::string node_;
  std::string detail_;
};

}  // namespace mhn
