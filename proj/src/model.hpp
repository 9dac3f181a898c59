#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "autodiff.hpp"
#include "mpo.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace opdf::model {

enum class Activation { None, Relu, Tanh };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/// Dense layer: forward(x) = act(x * weight + bias), weight is [in, out].
struct LinearLayer {
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::None;

  std::size_t in_dim() const { return weight.extent(0); }
  std::size_t out_dim() const { return weight.extent(1); }
};

/// Linear layer whose weight lives as a trainable MPO core chain; the matrix
/// is re-contracted on the fly in every forward pass so gradients reach the
/// cores.
struct FactoredLinearLayer {
  mpo::MpoFactors factors;
  Tensor bias;
  Activation activation = Activation::None;

  std::size_t in_dim() const { return factors.plan.rows; }
  std::size_t out_dim() const { return factors.plan.cols; }
};

using Layer = std::variant<LinearLayer, FactoredLinearLayer>;

std::size_t layer_in_dim(const Layer& l);
std::size_t layer_out_dim(const Layer& l);
Activation layer_activation(const Layer& l);

struct Mlp {
  std::vector<Layer> layers;
  std::size_t input_dim = 0;
  std::size_t class_count = 0;
};

/// in -> hidden... -> classes with the given activation on all but the final
/// layer. Weights are Gaussian with scale 1/sqrt(fan_in); biases zero.
Mlp build_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
              std::size_t class_count, Activation act, Rng64& rng);

/// Master parameter slots bound into a forward graph; grads read back from
/// the graph after backward update the master tensors through these.
struct ParamBinding {
  Tensor* master;
  ad::Var var;
};

/// Core variables of one layer inside an active graph (empty for plain
/// layers); lets loss terms reference the same graph inputs as the forward
/// pass.
struct LayerVars {
  std::vector<ad::Var> cores;
};

/// Builds the logits graph for a batch. When bindings is non-null every
/// trainable tensor (weights/cores/biases) is registered as a graph input
/// with requires_grad and recorded there.
ad::Var forward(ad::Graph& g, Mlp& m, const Tensor& x,
                std::vector<ParamBinding>* bindings,
                std::vector<LayerVars>* layer_vars = nullptr);

/// Plain (graph-free) forward for evaluation; factored layers contract their
/// chains with the same operation order as the graph path.
Tensor predict_logits(const Mlp& m, const Tensor& x);

std::vector<std::size_t> argmax_rows(const Tensor& logits);

double accuracy(const Mlp& m, const Tensor& x,
                const std::vector<std::size_t>& labels);

/// Per-layer factorization request. Layers absent from the scheme list are
/// left untouched; biases are never decomposed.
struct LayerScheme {
  std::size_t layer = 0;
  std::vector<std::size_t> in_dims;
  std::vector<std::size_t> out_dims;
  std::optional<std::size_t> bond_cap;
};

/// Replaces each scheme'd plain layer with a factored layer initialized by
/// exact decomposition of its current weight. Idempotent on layers without a
/// scheme; the forward map changes only within the truncation bound.
Mlp overparameterize(const Mlp& m, const std::vector<LayerScheme>& schemes,
                     std::optional<double> tol = std::nullopt,
                     bool rebalance = false);

/// Contracts every factored layer back to a plain layer with
/// weight = reconstruct(factors).
Mlp contract_model(const Mlp& m);

std::size_t trainable_param_count(const Mlp& m);
bool has_factored_layers(const Mlp& m);

// -- optimizer ---------------------------------------------------------------

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 0.01;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// SGD-with-momentum or Adam over a fixed parameter list; moment tensors
/// mirror parameter shapes and are keyed by position.
class SgdAdamState {
 public:
  explicit SgdAdamState(OptimizerConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<Tensor*>& params,
            const std::vector<const Tensor*>& grads);

  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> m_;  // first moment / momentum buffer
  std::vector<Tensor> v_;  // second moment (adam)
  long long t_ = 0;
};

// -- checkpoint persistence ----------------------------------------------
//
// A checkpoint is a directory: manifest.json describes the stack (type,
// activation, file names); plain layers store weight/bias TNSR files,
// factored layers store a bias TNSR plus an MPO bundle subdirectory.

void save_checkpoint(const std::string& dir, const Mlp& m);
Mlp load_checkpoint(const std::string& dir);

}  // namespace opdf::model
