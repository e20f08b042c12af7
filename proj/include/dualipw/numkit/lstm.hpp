#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualipw/numkit/autodiff.hpp"
#include "dualipw/numkit/graph.hpp"
#include "dualipw/numkit/tensor.hpp"

namespace dualipw::numkit {

// One LSTM layer bound into a graph. Gate blocks of w_ih[4H,in],
// w_hh[4H,H] and bias[4H] are ordered input, forget, candidate, output.
struct LstmLayer {
  Var w_ih;
  Var w_hh;
  Var bias;
  Var zero_bias;
  std::size_t hidden = 0;
};

inline std::string lstm_param_name(const std::string& prefix, std::size_t layer,
                                   const char* what) {
  return prefix + "l" + std::to_string(layer) + "." + what;
}

template <class Rng>
void init_lstm_params(ParamSet& params, const std::string& prefix, std::size_t input_size,
                      std::size_t hidden, std::size_t layers, Rng& rng) {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = l == 0 ? input_size : hidden;
    params[lstm_param_name(prefix, l, "w_ih")] = uniform_init({4 * hidden, in}, hidden, rng);
    params[lstm_param_name(prefix, l, "w_hh")] =
        uniform_init({4 * hidden, hidden}, hidden, rng);
    params[lstm_param_name(prefix, l, "bias")] = uniform_init({4 * hidden}, hidden, rng);
  }
}

inline std::size_t lstm_layer_count(const ParamSet& params, const std::string& prefix) {
  std::size_t n = 0;
  while (params.count(lstm_param_name(prefix, n, "w_ih"))) ++n;
  return n;
}

inline std::vector<LstmLayer> bind_lstm(Graph& g, const ParamSet& params,
                                        const std::string& prefix) {
  std::vector<LstmLayer> layers;
  const std::size_t n = lstm_layer_count(params, prefix);
  for (std::size_t l = 0; l < n; ++l) {
    LstmLayer layer;
    layer.w_ih = g.parameter(params, lstm_param_name(prefix, l, "w_ih"));
    layer.w_hh = g.parameter(params, lstm_param_name(prefix, l, "w_hh"));
    layer.bias = g.parameter(params, lstm_param_name(prefix, l, "bias"));
    layer.hidden = g.value(layer.w_hh).cols();
    layer.zero_bias = g.constant(Tensor(Shape{4 * layer.hidden}));
    layers.push_back(layer);
  }
  return layers;
}

/// Runs a stacked LSTM over `steps` (each [batch, in]) from zero initial
/// hidden and cell states. Returns the top layer's hidden state per step.
inline std::vector<Var> lstm_forward(Graph& g, std::span<const Var> steps,
                                     std::span<const LstmLayer> layers) {
  if (steps.empty()) throw std::invalid_argument("lstm_forward: empty sequence");
  if (layers.empty()) throw std::invalid_argument("lstm_forward: no layers");
  std::vector<Var> seq(steps.begin(), steps.end());
  for (const LstmLayer& layer : layers) {
    const std::size_t h = layer.hidden;
    std::vector<Var> out;
    out.reserve(seq.size());
    Var hs{}, cs{};
    for (std::size_t t = 0; t < seq.size(); ++t) {
      Var gates = g.affine(seq[t], layer.w_ih, layer.bias);
      if (t > 0) gates = g.add(gates, g.affine(hs, layer.w_hh, layer.zero_bias));
      const Var ig = g.sigmoid(g.slice_cols(gates, 0, h));
      const Var fg = g.sigmoid(g.slice_cols(gates, h, 2 * h));
      const Var cand = g.tanh(g.slice_cols(gates, 2 * h, 3 * h));
      const Var og = g.sigmoid(g.slice_cols(gates, 3 * h, 4 * h));
      cs = t > 0 ? g.add(g.mul(fg, cs), g.mul(ig, cand)) : g.mul(ig, cand);
      hs = g.mul(og, g.tanh(cs));
      out.push_back(hs);
    }
    seq = std::move(out);
  }
  return seq;
}

// Tensor-level convenience wrapper.
inline std::vector<Tensor> lstm_forward(std::span<const Tensor> sequence,
                                        const ParamSet& params, const std::string& prefix) {
  Graph g;
  std::vector<Var> steps;
  for (const Tensor& t : sequence) steps.push_back(g.input("x", t));
  const auto layers = bind_lstm(g, params, prefix);
  std::vector<Tensor> out;
  for (Var v : lstm_forward(g, steps, layers)) out.push_back(g.value(v));
  return out;
}

}  // namespace dualipw::numkit
