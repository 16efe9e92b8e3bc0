#pragma once

#include <string>
#include <utility>
#include <vector>

#include "akhcr/layers.hpp"
#include "akhcr/objective.hpp"
#include "akhcr/params.hpp"
#include "akhcr/rng.hpp"

namespace akhcr {

enum class NodeKind { input, conv, batchnorm, maxpool, relu, dropout, concat, dense, flatten };

// One declarative layer of the wired graph. Fields beyond `inputs` are
// meaningful per kind: conv uses ksize/width, dense uses width, maxpool uses
// window/stride/padding, dropout uses rate.
struct LayerNode {
  NodeKind kind = NodeKind::input;
  std::string name;
  std::vector<int> inputs;
  int ksize = 0;
  int width = 0;
  int window = 0;
  int stride = 0;
  Padding padding = Padding::valid;
  double rate = 0.0;
};

struct ArchConfig {
  int input_hw = 32;
  int input_channels = 1;
  int stem_ksize = 5;
  int stem_width = 32;
  int incep_width = 128;       // branches a (1x1->3x3), b (1x1->5x5), c (1x1)
  int incep_pool_width = 64;   // branch d: same-padded 3x3 pool -> 3x3 conv
  std::vector<int> rear_widths = {256, 512};  // conv -> pool -> batchnorm -> pool blocks
  std::vector<int> dense_widths = {1024, 512, 256, 128};
  int dropout_after_hidden = 2;  // 1-based dense hidden layer carrying dropout
  double dropout_rate = 0.5;
  int n_classes = 84;

  static ArchConfig akhcrnet(int n_classes = 84);
  // Reduced clone with the same topology for whole-model gradient checks:
  // 8x8 input, 4/8/8-channel stages, one rear block, one hidden dense layer.
  static ArchConfig tiny();
};

struct ModelGraph {
  ArchConfig cfg;
  std::vector<LayerNode> nodes;
  int output_node = -1;

  // per-node output shapes for a given batch size; validates the wiring
  std::vector<Shape> shape_trace(std::int64_t batch = 1) const;
};

// Builds the node list and statically checks the shape flow down to
// (N, n_classes).
ModelGraph build_graph(const ArchConfig& cfg);

template <class T>
struct ModelStateT {
  ParamStoreT<T> params;    // learnable tensors
  ParamStoreT<T> bn_stats;  // batch-norm running mean/var
};
using ModelState = ModelStateT<float>;

// conv/dense weights He-initialized from per-parameter streams of `seed`,
// biases zero, batch-norm gamma 1 / beta 0 / running stats (0, 1)
template <class T>
ModelStateT<T> init_state(const ModelGraph& graph, std::uint64_t seed);

std::pair<ModelGraph, ModelState> build_akhcrnet(std::uint64_t seed);

template <class T>
std::int64_t parameter_count(const ParamStoreT<T>& params) {
  std::int64_t n = 0;
  for (const auto& [name, tensor] : params) n += tensor.size();
  return n;
}

template <class T>
struct ForwardCacheT {
  Mode mode = Mode::infer;
  std::vector<TensorT<T>> out;                        // per-node outputs
  std::vector<BnCacheT<T>> bn;                        // per-node, batchnorm only
  std::vector<MaxPoolCache> pool;                     // per-node, maxpool only
  std::vector<std::vector<std::uint8_t>> drop_mask;   // per-node, dropout only
};
using ForwardCache = ForwardCacheT<float>;

// Returns logits [N, n_classes]. Train mode updates batch-norm running stats
// and draws dropout masks from `rng`; infer mode is a pure function of
// (state, images).
template <class T>
TensorT<T> model_forward(const ModelGraph& graph, ModelStateT<T>& state,
                         const TensorT<T>& images, Mode mode, Rng& rng,
                         ForwardCacheT<T>* cache = nullptr);

// Loss J and gradients for every learnable parameter; the L2 term
// (lambda/m) W is added to the kernels named in `cfg.regularized`.
template <class T>
std::pair<LossReport, ParamStoreT<T>> model_backward(const ModelGraph& graph,
                                                     const ModelStateT<T>& state,
                                                     const ForwardCacheT<T>& cache,
                                                     const std::vector<int>& labels,
                                                     const LossConfig& cfg,
                                                     std::int64_t* clamped = nullptr);

// lambda plus the hidden dense kernels (output layer excluded)
LossConfig default_loss_config(const ModelGraph& graph, double lambda = 1e-3);

struct Prediction {
  int class_id = -1;
  double probability = 0.0;
};

// Softmax probabilities for one [32, 32, 1] image, sorted descending.
template <class T>
std::vector<Prediction> predict(const ModelGraph& graph, ModelStateT<T>& state,
                                const TensorT<T>& image, int topk);

// ------------------------------------------------------------ implementation

namespace detail {

inline const LayerNode& only_input(const ModelGraph& graph, const LayerNode& node) {
  return graph.nodes[static_cast<std::size_t>(node.inputs.at(0))];
}

template <class T>
BatchNormParamsT<T> gather_bn_params(const ModelStateT<T>& state, const std::string& name) {
  BatchNormParamsT<T> p;
  p.gamma = state.params.at(name + "/gamma");
  p.beta = state.params.at(name + "/beta");
  p.running_mean = state.bn_stats.at(name + "/running_mean");
  p.running_var = state.bn_stats.at(name + "/running_var");
  return p;
}

}  // namespace detail

template <class T>
TensorT<T> model_forward(const ModelGraph& graph, ModelStateT<T>& state,
                         const TensorT<T>& images, Mode mode, Rng& rng,
                         ForwardCacheT<T>* cache) {
  const std::size_t n_nodes = graph.nodes.size();
  ForwardCacheT<T> local;
  ForwardCacheT<T>& cc = cache ? *cache : local;
  cc.mode = mode;
  cc.out.assign(n_nodes, TensorT<T>());
  cc.bn.assign(n_nodes, BnCacheT<T>());
  cc.pool.assign(n_nodes, MaxPoolCache());
  cc.drop_mask.assign(n_nodes, {});

  for (std::size_t i = 0; i < n_nodes; ++i) {
    const LayerNode& node = graph.nodes[i];
    switch (node.kind) {
      case NodeKind::input: {
        const Shape want{images.shape[0], graph.cfg.input_hw, graph.cfg.input_hw,
                         graph.cfg.input_channels};
        if (images.rank() != 4 || images.shape != want)
          throw ShapeError("model input shape " + images.shape.str() + ", expected " +
                           want.str());
        cc.out[i] = images;
        break;
      }
      case NodeKind::conv: {
        ConvParamsT<T> p{state.params.at(node.name + "/kernel"),
                         state.params.at(node.name + "/bias")};
        cc.out[i] = conv2d_forward(cc.out[static_cast<std::size_t>(node.inputs[0])], p);
        break;
      }
      case NodeKind::batchnorm: {
        auto p = detail::gather_bn_params(state, node.name);
        auto [out, bn_cache] =
            batchnorm_forward(cc.out[static_cast<std::size_t>(node.inputs[0])], p, mode);
        cc.out[i] = std::move(out);
        cc.bn[i] = std::move(bn_cache);
        if (mode == Mode::train) {
          state.bn_stats.at(node.name + "/running_mean") = std::move(p.running_mean);
          state.bn_stats.at(node.name + "/running_var") = std::move(p.running_var);
        }
        break;
      }
      case NodeKind::maxpool: {
        auto [out, pool_cache] =
            maxpool_forward(cc.out[static_cast<std::size_t>(node.inputs[0])], node.window,
                            node.stride, node.padding);
        cc.out[i] = std::move(out);
        cc.pool[i] = std::move(pool_cache);
        break;
      }
      case NodeKind::relu:
        cc.out[i] = relu(cc.out[static_cast<std::size_t>(node.inputs[0])]);
        break;
      case NodeKind::dropout: {
        auto res = dropout_forward(cc.out[static_cast<std::size_t>(node.inputs[0])],
                                   node.rate, mode, rng);
        cc.out[i] = std::move(res.out);
        cc.drop_mask[i] = std::move(res.mask);
        break;
      }
      case NodeKind::concat: {
        std::vector<TensorT<T>> parts;
        parts.reserve(node.inputs.size());
        for (int in : node.inputs) parts.push_back(cc.out[static_cast<std::size_t>(in)]);
        cc.out[i] = concat_channels(parts);
        break;
      }
      case NodeKind::dense: {
        DenseParamsT<T> p{state.params.at(node.name + "/weight"),
                          state.params.at(node.name + "/bias")};
        cc.out[i] = dense_forward(cc.out[static_cast<std::size_t>(node.inputs[0])], p);
        break;
      }
      case NodeKind::flatten:
        cc.out[i] = flatten(cc.out[static_cast<std::size_t>(node.inputs[0])]);
        break;
    }
  }
  return cc.out[static_cast<std::size_t>(graph.output_node)];
}

template <class T>
std::pair<LossReport, ParamStoreT<T>> model_backward(const ModelGraph& graph,
                                                     const ModelStateT<T>& state,
                                                     const ForwardCacheT<T>& cache,
                                                     const std::vector<int>& labels,
                                                     const LossConfig& cfg,
                                                     std::int64_t* clamped) {
  if (cache.mode != Mode::train)
    throw UsageError("model_backward needs a train-mode forward cache");
  if (cache.out.size() != graph.nodes.size() || cache.out.empty() ||
      cache.out[static_cast<std::size_t>(graph.output_node)].size() == 0)
    throw UsageError("model_backward: stale or empty forward cache");

  const TensorT<T>& logits = cache.out[static_cast<std::size_t>(graph.output_node)];
  auto [report, dlogits] = loss_and_logit_grad(logits, labels, state.params, cfg, clamped);
  const std::int64_t batch = logits.shape[0];

  ParamStoreT<T> grads;
  std::vector<TensorT<T>> dout(graph.nodes.size());
  dout[static_cast<std::size_t>(graph.output_node)] = std::move(dlogits);

  auto accumulate = [&](int node_id, TensorT<T>&& grad) {
    TensorT<T>& slot = dout[static_cast<std::size_t>(node_id)];
    if (slot.size() == 0) {
      slot = std::move(grad);
    } else {
      if (slot.shape != grad.shape)
        throw ShapeError("gradient fan-in shape mismatch at node " +
                         graph.nodes[static_cast<std::size_t>(node_id)].name);
      for (std::int64_t k = 0; k < slot.size(); ++k) slot[k] += grad[k];
    }
  };

  for (int i = static_cast<int>(graph.nodes.size()) - 1; i >= 0; --i) {
    const LayerNode& node = graph.nodes[static_cast<std::size_t>(i)];
    TensorT<T>& upstream = dout[static_cast<std::size_t>(i)];
    if (upstream.size() == 0) continue;  // node feeds nothing that was differentiated

    switch (node.kind) {
      case NodeKind::input:
        break;
      case NodeKind::conv: {
        ConvParamsT<T> p{state.params.at(node.name + "/kernel"),
                         state.params.at(node.name + "/bias")};
        auto g = conv2d_backward(cache.out[static_cast<std::size_t>(node.inputs[0])], p,
                                 upstream);
        grads[node.name + "/kernel"] = std::move(g.dkernel);
        grads[node.name + "/bias"] = std::move(g.dbias);
        accumulate(node.inputs[0], std::move(g.dx));
        break;
      }
      case NodeKind::batchnorm: {
        auto g = batchnorm_backward(cache.bn[static_cast<std::size_t>(i)],
                                    state.params.at(node.name + "/gamma"), upstream);
        grads[node.name + "/gamma"] = std::move(g.dgamma);
        grads[node.name + "/beta"] = std::move(g.dbeta);
        accumulate(node.inputs[0], std::move(g.dx));
        break;
      }
      case NodeKind::maxpool:
        accumulate(node.inputs[0],
                   maxpool_backward(cache.pool[static_cast<std::size_t>(i)], upstream));
        break;
      case NodeKind::relu:
        accumulate(node.inputs[0],
                   relu_backward(cache.out[static_cast<std::size_t>(node.inputs[0])],
                                 upstream));
        break;
      case NodeKind::dropout:
        accumulate(node.inputs[0],
                   dropout_backward(cache.drop_mask[static_cast<std::size_t>(i)], node.rate,
                                    upstream));
        break;
      case NodeKind::concat: {
        std::vector<std::int64_t> counts;
        counts.reserve(node.inputs.size());
        for (int in : node.inputs)
          counts.push_back(cache.out[static_cast<std::size_t>(in)].shape[3]);
        auto parts = split_channels(upstream, counts);
        for (std::size_t k = 0; k < parts.size(); ++k)
          accumulate(node.inputs[k], std::move(parts[k]));
        break;
      }
      case NodeKind::dense: {
        DenseParamsT<T> p{state.params.at(node.name + "/weight"),
                          state.params.at(node.name + "/bias")};
        auto g = dense_backward(cache.out[static_cast<std::size_t>(node.inputs[0])], p,
                                upstream);
        grads[node.name + "/weight"] = std::move(g.dweight);
        grads[node.name + "/bias"] = std::move(g.dbias);
        accumulate(node.inputs[0], std::move(g.dx));
        break;
      }
      case NodeKind::flatten:
        accumulate(node.inputs[0],
                   unflatten(upstream,
                             cache.out[static_cast<std::size_t>(node.inputs[0])].shape));
        break;
    }
    upstream = TensorT<T>();  // free as we go
  }

  // L2 on the configured kernels: d/dW (lambda/2m)||W||^2 = (lambda/m) W
  if (cfg.lambda != 0.0) {
    const T factor = static_cast<T>(cfg.lambda / static_cast<double>(batch));
    for (const auto& name : cfg.regularized) {
      const auto pit = state.params.find(name);
      if (pit == state.params.end())
        throw ConfigError("regularized parameter '" + name + "' not in store");
      auto git = grads.find(name);
      if (git == grads.end())
        throw ConfigError("regularized parameter '" + name + "' has no gradient");
      for (std::int64_t k = 0; k < git->second.size(); ++k)
        git->second[k] += factor * pit->second[k];
    }
  }
  return {report, std::move(grads)};
}

template <class T>
std::vector<Prediction> predict(const ModelGraph& graph, ModelStateT<T>& state,
                                const TensorT<T>& image, int topk) {
  if (topk < 1 || topk > graph.cfg.n_classes)
    throw RangeError("predict: topk must be in [1, " +
                     std::to_string(graph.cfg.n_classes) + "], got " + std::to_string(topk));
  const Shape want{graph.cfg.input_hw, graph.cfg.input_hw, graph.cfg.input_channels};
  if (image.shape != want)
    throw ShapeError("predict: image shape " + image.shape.str() + ", expected " +
                     want.str());
  TensorT<T> batch(Shape{1, want[0], want[1], want[2]}, image.data);
  Rng rng(0);  // unused in infer mode
  const TensorT<T> logits = model_forward(graph, state, batch, Mode::infer, rng);
  const TensorT<T> probs = softmax(logits);

  std::vector<Prediction> ranked(static_cast<std::size_t>(graph.cfg.n_classes));
  for (int c = 0; c < graph.cfg.n_classes; ++c)
    ranked[static_cast<std::size_t>(c)] = {c, static_cast<double>(probs[c])};
  std::stable_sort(ranked.begin(), ranked.end(), [](const Prediction& a, const Prediction& b) {
    return a.probability > b.probability;
  });
  ranked.resize(static_cast<std::size_t>(topk));
  return ranked;
}

}  // namespace akhcr
