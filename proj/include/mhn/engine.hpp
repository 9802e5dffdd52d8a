#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mhn/archgraph.hpp"
#include "mhn/builders.hpp"
#include "mhn/error.hpp"
#include "mhn/tensor.hpp"

namespace mhn {

struct ConvWeights {
  Tensor4 kernel;  // (out_c, in_c, kh, kw)
  std::vector<float> bias;
  friend bool operator==(const ConvWeights&, const ConvWeights&) = default;
};

// Weight blobs keyed by share group, or by node id for unshared convs.
class WeightStore {
 public:
  void set(const std::string& key, ConvWeights w) { entries_[key] = std::move(w); }
  const ConvWeights* find(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }
  ConvWeights* find(const std::string& key) {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }
  const std::map<std::string, ConvWeights>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  std::map<std::string, ConvWeights> entries_;
};

inline std::string weight_key(const NodeSpec& n) {
  return n.share_group.empty() ? n.id : n.share_group;
}

struct WeightSlot {
  std::string key;
  std::string node;  // first node bound to the key
  Shape4 kernel;
};

/// Weight blobs a graph needs, in declaration order, one per key. Includes
/// the second-stage head when the graph declares one.
inline std::vector<WeightSlot> weight_slots(const ArchGraph& g) {
  std::vector<WeightSlot> slots;
  auto collect = [&slots](const ArchGraph& graph) {
    const SignatureMap sigs = infer_signatures(graph);
    for (const NodeSpec& n : graph.nodes()) {
      if (n.op != Op::Conv) continue;
      const std::string key = weight_key(n);
      bool seen = false;
      for (const WeightSlot& s : slots) seen = seen || s.key == key;
      if (seen) continue;
      const int in_c = sigs.at(n.inputs.front()).channels;
      slots.push_back({key, n.id, {n.out_channels, in_c, n.kernel.h, n.kernel.w}});
    }
  };
  collect(g);
  if (g.rcnn()) collect(rcnn_head_graph(g));
  return slots;
}

/// Gaussian kernels (mean 0, given sigma) drawn in slot order from one
/// seeded engine; zero biases.
inline WeightStore init_weights(const ArchGraph& g, std::uint64_t seed, float sigma = 0.01f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, sigma);
  WeightStore store;
  for (const WeightSlot& s : weight_slots(g)) {
    Tensor4 k(s.kernel);
    for (float& v : k.data()) v = gauss(rng);
    store.set(s.key, {std::move(k), std::vector<float>(s.kernel.n, 0.0f)});
  }
  return store;
}

/// Every kernel entry set to `kernel_value`, every bias to `bias_value`.
inline WeightStore constant_weights(const ArchGraph& g, float kernel_value, float bias_value = 0.0f) {
  WeightStore store;
  for (const WeightSlot& s : weight_slots(g))
    store.set(s.key, {Tensor4(s.kernel, kernel_value), std::vector<float>(s.kernel.n, bias_value)});
  return store;
}

/// Throws MissingWeights / ShapeMismatch naming the first offending node.
inline void check_weights(const ArchGraph& g, const WeightStore& w) {
  const SignatureMap sigs = infer_signatures(g);
  for (const NodeSpec& n : g.nodes()) {
    if (n.op != Op::Conv) continue;
    const ConvWeights* cw = w.find(weight_key(n));
    if (!cw) throw Error(ErrorKind::MissingWeights, "no weights for '" + weight_key(n) + "'", n.id);
    const Shape4 want{n.out_channels, sigs.at(n.inputs.front()).channels, n.kernel.h, n.kernel.w};
    if (cw->kernel.shape() != want)
      throw Error(ErrorKind::ShapeMismatch,
                  "kernel " + cw->kernel.shape().str() + " but node needs " + want.str(), n.id);
    if (cw->bias.size() != static_cast<std::size_t>(n.out_channels))
      throw Error(ErrorKind::ShapeMismatch, "bias length does not match channels", n.id);
  }
}

using NodeValues = std::unordered_map<std::string, Tensor4>;

/// Runs the graph and returns every node's value.
inline NodeValues forward_all(const ArchGraph& g, const WeightStore& w, const Tensor4& x) {
  const ValidationReport report = validate(g);
  if (!report.ok()) throw Error(ErrorKind::InvalidGraph, report.violations.front());
  check_weights(g, w);
  const auto order = detail::topological_order(g);

  NodeValues values;
  for (const NodeSpec* n : *order) {
    try {
      switch (n->op) {
        case Op::Input:
          if (x.c() != n->out_channels)
            throw Error(ErrorKind::ShapeMismatch, "input has " + std::to_string(x.c()) +
                                                      " channels, graph expects " +
                                                      std::to_string(n->out_channels));
          values.emplace(n->id, x);
          break;
        case Op::Conv: {
          const ConvWeights& cw = *w.find(weight_key(*n));
          values.emplace(n->id, conv2d(values.at(n->inputs.front()), cw.kernel, cw.bias,
                                       {n->stride, n->dilation, n->padding}));
          break;
        }
        case Op::Pool:
          values.emplace(n->id, maxpool2d(values.at(n->inputs.front()), n->kernel, n->stride,
                                          n->padding));
          break;
        case Op::ReLU:
          values.emplace(n->id, relu(values.at(n->inputs.front())));
          break;
        case Op::Add: {
          Tensor4 acc = values.at(n->inputs.front());
          for (std::size_t i = 1; i < n->inputs.size(); ++i)
            acc = elementwise_add(acc, values.at(n->inputs[i]));
          values.emplace(n->id, std::move(acc));
          break;
        }
        case Op::UpsampleX2:
          values.emplace(n->id, upsample_bilinear_x2(values.at(n->inputs.front())));
          break;
      }
    } catch (const Error& e) {
      if (!e.node().empty()) throw;
      throw Error(e.kind(), e.detail(), n->id);
    }
  }
  return values;
}

/// Declared outputs keyed by branch name.
inline std::map<std::string, Tensor4> forward(const ArchGraph& g, const WeightStore& w,
                                              const Tensor4& x) {
  NodeValues all = forward_all(g, w, x);
  std::map<std::string, Tensor4> out;
  for (const BranchOutput& o : g.outputs()) out.emplace(o.name, all.at(o.node));
  return out;
}

}  // namespace mhn
