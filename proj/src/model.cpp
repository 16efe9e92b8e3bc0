#include "akhcr/model.hpp"

namespace akhcr {

ArchConfig ArchConfig::akhcrnet(int n_classes) {
  ArchConfig cfg;
  cfg.n_classes = n_classes;
  return cfg;
}

ArchConfig ArchConfig::tiny() {
  ArchConfig cfg;
  cfg.input_hw = 8;
  cfg.stem_ksize = 3;
  cfg.stem_width = 4;
  cfg.incep_width = 8;
  cfg.incep_pool_width = 8;
  cfg.rear_widths = {8};
  cfg.dense_widths = {16};
  cfg.dropout_after_hidden = 1;
  cfg.dropout_rate = 0.0;  // keeps the node wired but deterministic
  cfg.n_classes = 5;
  return cfg;
}

namespace {

struct Builder {
  ModelGraph g;

  int add(LayerNode node) {
    g.nodes.push_back(std::move(node));
    return static_cast<int>(g.nodes.size()) - 1;
  }
  int input() {
    LayerNode n;
    n.kind = NodeKind::input;
    n.name = "input";
    return add(std::move(n));
  }
  int conv(const std::string& name, int from, int ksize, int width) {
    LayerNode n;
    n.kind = NodeKind::conv;
    n.name = name;
    n.inputs = {from};
    n.ksize = ksize;
    n.width = width;
    return add(std::move(n));
  }
  int batchnorm(const std::string& name, int from) {
    LayerNode n;
    n.kind = NodeKind::batchnorm;
    n.name = name;
    n.inputs = {from};
    return add(std::move(n));
  }
  int maxpool(const std::string& name, int from, int window, int stride, Padding pad) {
    LayerNode n;
    n.kind = NodeKind::maxpool;
    n.name = name;
    n.inputs = {from};
    n.window = window;
    n.stride = stride;
    n.padding = pad;
    return add(std::move(n));
  }
  int act(const std::string& name, int from) {
    LayerNode n;
    n.kind = NodeKind::relu;
    n.name = name;
    n.inputs = {from};
    return add(std::move(n));
  }
  int dropout(const std::string& name, int from, double rate) {
    LayerNode n;
    n.kind = NodeKind::dropout;
    n.name = name;
    n.inputs = {from};
    n.rate = rate;
    return add(std::move(n));
  }
  int concat(const std::string& name, std::vector<int> from) {
    LayerNode n;
    n.kind = NodeKind::concat;
    n.name = name;
    n.inputs = std::move(from);
    return add(std::move(n));
  }
  int dense(const std::string& name, int from, int width) {
    LayerNode n;
    n.kind = NodeKind::dense;
    n.name = name;
    n.inputs = {from};
    n.width = width;
    return add(std::move(n));
  }
  int flat(const std::string& name, int from) {
    LayerNode n;
    n.kind = NodeKind::flatten;
    n.name = name;
    n.inputs = {from};
    return add(std::move(n));
  }
};

}  // namespace

ModelGraph build_graph(const ArchConfig& cfg) {
  Builder b;
  b.g.cfg = cfg;

  int x = b.input();
  x = b.conv("stem1", x, cfg.stem_ksize, cfg.stem_width);
  x = b.act("stem1_relu", x);
  x = b.conv("stem2", x, cfg.stem_ksize, cfg.stem_width);
  x = b.act("stem2_relu", x);
  x = b.batchnorm("stem_bn", x);
  x = b.maxpool("stem_pool", x, 2, 2, Padding::valid);

  // inception block: four parallel branches on the pooled tensor
  int ba = b.conv("incep_a_reduce", x, 1, cfg.incep_width);
  ba = b.act("incep_a_reduce_relu", ba);
  ba = b.conv("incep_a_conv", ba, 3, cfg.incep_width);
  ba = b.act("incep_a_relu", ba);

  int bb = b.conv("incep_b_reduce", x, 1, cfg.incep_width);
  bb = b.act("incep_b_reduce_relu", bb);
  bb = b.conv("incep_b_conv", bb, 5, cfg.incep_width);
  bb = b.act("incep_b_relu", bb);

  int bc = b.conv("incep_c_conv", x, 1, cfg.incep_width);
  bc = b.act("incep_c_relu", bc);

  int bd = b.maxpool("incep_d_pool", x, 3, 1, Padding::same);
  bd = b.conv("incep_d_conv", bd, 3, cfg.incep_pool_width);
  bd = b.act("incep_d_relu", bd);

  x = b.concat("incep_concat", {ba, bb, bc, bd});
  x = b.act("incep_relu", x);

  // rear blocks: conv -> pool -> batchnorm -> pool
  for (std::size_t i = 0; i < cfg.rear_widths.size(); ++i) {
    const std::string base = "rear" + std::to_string(i + 1);
    x = b.conv(base + "_conv", x, 3, cfg.rear_widths[i]);
    x = b.act(base + "_relu", x);
    x = b.maxpool(base + "_pool1", x, 2, 2, Padding::valid);
    x = b.batchnorm(base + "_bn", x);
    x = b.maxpool(base + "_pool2", x, 2, 2, Padding::valid);
  }

  x = b.flat("flatten", x);

  for (std::size_t i = 0; i < cfg.dense_widths.size(); ++i) {
    const std::string base = "fc" + std::to_string(i + 1);
    x = b.dense(base, x, cfg.dense_widths[i]);
    x = b.act(base + "_relu", x);
    if (static_cast<int>(i) + 1 == cfg.dropout_after_hidden)
      x = b.dropout(base + "_drop", x, cfg.dropout_rate);
  }

  x = b.dense("head", x, cfg.n_classes);
  b.g.output_node = x;

  b.g.shape_trace(2);  // static wiring check
  return b.g;
}

std::vector<Shape> ModelGraph::shape_trace(std::int64_t batch) const {
  std::vector<Shape> shapes(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const LayerNode& node = nodes[i];
    auto in = [&](std::size_t which = 0) -> const Shape& {
      return shapes[static_cast<std::size_t>(node.inputs.at(which))];
    };
    switch (node.kind) {
      case NodeKind::input:
        shapes[i] = Shape{batch, cfg.input_hw, cfg.input_hw, cfg.input_channels};
        break;
      case NodeKind::conv: {
        const Shape& s = in();
        if (s.rank() != 4)
          throw ShapeError("conv node '" + node.name + "' fed rank-" +
                           std::to_string(s.rank()) + " input");
        shapes[i] = Shape{s[0], s[1], s[2], node.width};
        break;
      }
      case NodeKind::batchnorm:
      case NodeKind::relu:
      case NodeKind::dropout:
        shapes[i] = in();
        break;
      case NodeKind::maxpool: {
        const Shape& s = in();
        shapes[i] = Shape{s[0], pooled_extent(s[1], node.window, node.stride, node.padding),
                          pooled_extent(s[2], node.window, node.stride, node.padding), s[3]};
        break;
      }
      case NodeKind::concat: {
        std::int64_t channels = 0;
        const Shape& first = in();
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          const Shape& s = in(k);
          if (s[0] != first[0] || s[1] != first[1] || s[2] != first[2])
            throw ShapeError("concat node '" + node.name + "' spatial mismatch: " +
                             s.str() + " vs " + first.str());
          channels += s[3];
        }
        shapes[i] = Shape{first[0], first[1], first[2], channels};
        break;
      }
      case NodeKind::dense: {
        const Shape& s = in();
        if (s.rank() != 2)
          throw ShapeError("dense node '" + node.name + "' fed rank-" +
                           std::to_string(s.rank()) + " input");
        shapes[i] = Shape{s[0], node.width};
        break;
      }
      case NodeKind::flatten: {
        const Shape& s = in();
        shapes[i] = Shape{s[0], s[1] * s[2] * s[3]};
        break;
      }
    }
  }
  const Shape want{batch, cfg.n_classes};
  if (shapes[static_cast<std::size_t>(output_node)] != want)
    throw ShapeError("graph output shape " +
                     shapes[static_cast<std::size_t>(output_node)].str() + ", expected " +
                     want.str());
  return shapes;
}

template <class T>
ModelStateT<T> init_state(const ModelGraph& graph, std::uint64_t seed) {
  ModelStateT<T> state;
  const auto trace = graph.shape_trace(2);
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const LayerNode& node = graph.nodes[i];
    switch (node.kind) {
      case NodeKind::conv: {
        const Shape& in = trace[static_cast<std::size_t>(node.inputs[0])];
        const std::int64_t cin = in[3];
        const std::int64_t fan_in = static_cast<std::int64_t>(node.ksize) * node.ksize * cin;
        Rng rng(mix_seed(seed, fnv1a64(node.name)));
        state.params[node.name + "/kernel"] =
            he_init<T>(Shape{node.ksize, node.ksize, cin, node.width}, fan_in, rng);
        state.params[node.name + "/bias"] = TensorT<T>(Shape{node.width});
        break;
      }
      case NodeKind::dense: {
        const Shape& in = trace[static_cast<std::size_t>(node.inputs[0])];
        const std::int64_t fan_in = in[1];
        // The classifier head starts at zero so the logits are exactly
        // uniform and the initial loss sits at ln(n_classes); He scaling
        // there inflates the logit variance well past that mark.
        if (static_cast<int>(i) == graph.output_node) {
          state.params[node.name + "/weight"] = TensorT<T>(Shape{fan_in, node.width});
        } else {
          Rng rng(mix_seed(seed, fnv1a64(node.name)));
          state.params[node.name + "/weight"] =
              he_init<T>(Shape{fan_in, node.width}, fan_in, rng);
        }
        state.params[node.name + "/bias"] = TensorT<T>(Shape{node.width});
        break;
      }
      case NodeKind::batchnorm: {
        const Shape& in = trace[static_cast<std::size_t>(node.inputs[0])];
        const std::int64_t c = in[in.rank() - 1];
        state.params[node.name + "/gamma"] = TensorT<T>(Shape{c}, T(1));
        state.params[node.name + "/beta"] = TensorT<T>(Shape{c});
        state.bn_stats[node.name + "/running_mean"] = TensorT<T>(Shape{c});
        state.bn_stats[node.name + "/running_var"] = TensorT<T>(Shape{c}, T(1));
        break;
      }
      default:
        break;
    }
  }
  return state;
}

template ModelStateT<float> init_state<float>(const ModelGraph&, std::uint64_t);
template ModelStateT<double> init_state<double>(const ModelGraph&, std::uint64_t);

std::pair<ModelGraph, ModelState> build_akhcrnet(std::uint64_t seed) {
  ModelGraph graph = build_graph(ArchConfig::akhcrnet());
  ModelState state = init_state<float>(graph, seed);
  return {std::move(graph), std::move(state)};
}

LossConfig default_loss_config(const ModelGraph& graph, double lambda) {
  LossConfig cfg;
  cfg.lambda = lambda;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const LayerNode& node = graph.nodes[i];
    if (node.kind == NodeKind::dense && static_cast<int>(i) != graph.output_node)
      cfg.regularized.push_back(node.name + "/weight");
  }
  return cfg;
}

}  // namespace akhcr
