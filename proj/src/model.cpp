#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace opdf::model {

namespace fs = std::filesystem;
using nlohmann::json;

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "none";
}

Activation activation_from_name(const std::string& name) {
  if (name == "none") return Activation::None;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  fail(ErrKind::ConfigError, "unknown activation '", name, "'");
}

std::size_t layer_in_dim(const Layer& l) {
  return std::visit([](const auto& x) { return x.in_dim(); }, l);
}

std::size_t layer_out_dim(const Layer& l) {
  return std::visit([](const auto& x) { return x.out_dim(); }, l);
}

Activation layer_activation(const Layer& l) {
  return std::visit([](const auto& x) { return x.activation; }, l);
}

Mlp build_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
              std::size_t class_count, Activation act, Rng64& rng) {
  require(input_dim >= 1 && class_count >= 2, ErrKind::ConfigError,
          "model needs input_dim >= 1 and class_count >= 2");
  Mlp m;
  m.input_dim = input_dim;
  m.class_count = class_count;
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(class_count);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    LinearLayer layer;
    layer.weight = Tensor({dims[l], dims[l + 1]});
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    for (double& w : layer.weight.data()) w = rng.gaussian() * scale;
    layer.bias = Tensor({dims[l + 1]});
    const bool last = (l + 2 == dims.size());
    layer.activation = last ? Activation::None : act;
    m.layers.push_back(std::move(layer));
  }
  return m;
}

namespace {

ad::Var apply_activation(ad::Graph& g, ad::Var z, Activation act) {
  switch (act) {
    case Activation::Relu: return g.relu(z);
    case Activation::Tanh: return g.tanh(z);
    case Activation::None: return z;
  }
  return z;
}

ad::Var bind(ad::Graph& g, Tensor& master, bool trainable,
             std::vector<ParamBinding>* bindings) {
  ad::Var v = g.input(master, trainable && bindings != nullptr);
  if (trainable && bindings) bindings->push_back({&master, v});
  return v;
}

}  // namespace

ad::Var forward(ad::Graph& g, Mlp& m, const Tensor& x,
                std::vector<ParamBinding>* bindings,
                std::vector<LayerVars>* layer_vars) {
  require(x.order() == 2, ErrKind::ExtentMismatch, "input must be [batch, in]");
  require(x.extent(1) == m.input_dim, ErrKind::ExtentMismatch, "input width ",
          x.extent(1), " != model input_dim ", m.input_dim);
  require(x.all_finite(), ErrKind::ExtentMismatch, "non-finite input batch");

  ad::Var h = g.constant(x);
  for (Layer& layer : m.layers) {
    LayerVars lv;
    if (auto* plain = std::get_if<LinearLayer>(&layer)) {
      ad::Var w = bind(g, plain->weight, true, bindings);
      ad::Var b = bind(g, plain->bias, true, bindings);
      h = apply_activation(g, g.add_row(g.matmul(h, w), b), plain->activation);
    } else {
      auto& fac = std::get<FactoredLinearLayer>(layer);
      std::vector<ad::Var> cores;
      cores.reserve(fac.factors.cores.size());
      for (Tensor& core : fac.factors.cores)
        cores.push_back(bind(g, core, true, bindings));
      lv.cores = cores;
      ad::Var w = g.contract_chain(cores);
      ad::Var b = bind(g, fac.bias, true, bindings);
      h = apply_activation(g, g.add_row(g.matmul(h, w), b), fac.activation);
    }
    if (layer_vars) layer_vars->push_back(std::move(lv));
  }
  return h;
}

Tensor predict_logits(const Mlp& m, const Tensor& x) {
  require(x.order() == 2 && x.extent(1) == m.input_dim, ErrKind::ExtentMismatch,
          "input must be [batch, ", m.input_dim, "]");
  Tensor h = x;
  for (const Layer& layer : m.layers) {
    const Tensor* weight = nullptr;
    Tensor reconstructed;
    const Tensor* bias = nullptr;
    Activation act;
    if (const auto* plain = std::get_if<LinearLayer>(&layer)) {
      weight = &plain->weight;
      bias = &plain->bias;
      act = plain->activation;
    } else {
      const auto& fac = std::get<FactoredLinearLayer>(layer);
      reconstructed = mpo::reconstruct(fac.factors);
      weight = &reconstructed;
      bias = &fac.bias;
      act = fac.activation;
    }
    Tensor z = matmul(h, *weight);
    const std::size_t rows = z.extent(0), cols = z.extent(1);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) z[i * cols + j] += (*bias)[j];
    switch (act) {
      case Activation::Relu:
        for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
        break;
      case Activation::Tanh:
        for (double& v : z.data()) v = std::tanh(v);
        break;
      case Activation::None:
        break;
    }
    h = std::move(z);
  }
  return h;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  require(logits.order() == 2, ErrKind::ExtentMismatch, "logits must be [m,c]");
  const std::size_t rows = logits.extent(0), cols = logits.extent(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j)
      if (logits[i * cols + j] > logits[i * cols + best]) best = j;
    out[i] = best;
  }
  return out;
}

double accuracy(const Mlp& m, const Tensor& x,
                const std::vector<std::size_t>& labels) {
  const auto pred = argmax_rows(predict_logits(m, x));
  require(pred.size() == labels.size(), ErrKind::DataShapeMismatch,
          "label count mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return labels.empty() ? 0.0
                        : static_cast<double>(hit) /
                              static_cast<double>(labels.size());
}

Mlp overparameterize(const Mlp& m, const std::vector<LayerScheme>& schemes,
                     std::optional<double> tol, bool rebalance) {
  Mlp out = m;
  for (const LayerScheme& s : schemes) {
    require(s.layer < out.layers.size(), ErrKind::DimProductMismatch,
            "scheme targets layer ", s.layer, " but the model has ",
            out.layers.size(), " layers");
    auto* plain = std::get_if<LinearLayer>(&out.layers[s.layer]);
    require(plain != nullptr, ErrKind::DimProductMismatch, "layer ", s.layer,
            " is already factored");
    mpo::MpoPlan plan = mpo::plan(plain->in_dim(), plain->out_dim(), s.in_dims,
                                  s.out_dims, s.bond_cap);
    FactoredLinearLayer fac;
    fac.factors = mpo::decompose(plain->weight, plan, tol, rebalance);
    fac.bias = plain->bias;
    fac.activation = plain->activation;
    out.layers[s.layer] = std::move(fac);
  }
  return out;
}

Mlp contract_model(const Mlp& m) {
  Mlp out = m;
  for (Layer& layer : out.layers) {
    if (auto* fac = std::get_if<FactoredLinearLayer>(&layer)) {
      LinearLayer plain;
      plain.weight = mpo::reconstruct(fac->factors);
      plain.bias = fac->bias;
      plain.activation = fac->activation;
      layer = std::move(plain);
    }
  }
  return out;
}

std::size_t trainable_param_count(const Mlp& m) {
  std::size_t n = 0;
  for (const Layer& layer : m.layers) {
    if (const auto* plain = std::get_if<LinearLayer>(&layer)) {
      n += plain->weight.size() + plain->bias.size();
    } else {
      const auto& fac = std::get<FactoredLinearLayer>(layer);
      for (const Tensor& c : fac.factors.cores) n += c.size();
      n += fac.bias.size();
    }
  }
  return n;
}

bool has_factored_layers(const Mlp& m) {
  for (const Layer& layer : m.layers)
    if (std::holds_alternative<FactoredLinearLayer>(layer)) return true;
  return false;
}

void SgdAdamState::step(const std::vector<Tensor*>& params,
                        const std::vector<const Tensor*>& grads) {
  require(params.size() == grads.size(), ErrKind::ExtentMismatch,
          "param/grad list lengths differ");
  if (m_.empty()) {
    for (const Tensor* p : params) m_.push_back(Tensor(p->shape()));
    if (cfg_.kind == OptimizerKind::Adam)
      for (const Tensor* p : params) v_.push_back(Tensor(p->shape()));
  }
  require(m_.size() == params.size(), ErrKind::ExtentMismatch,
          "optimizer was initialized for a different parameter list");
  ++t_;

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    require(p.same_shape(g), ErrKind::ExtentMismatch,
            "grad shape differs from param shape");
    if (cfg_.kind == OptimizerKind::Sgd) {
      Tensor& vel = m_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        vel[j] = cfg_.momentum * vel[j] + g[j];
        p[j] -= cfg_.learning_rate * vel[j];
      }
    } else {
      Tensor& m1 = m_[i];
      Tensor& m2 = v_[i];
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      for (std::size_t j = 0; j < p.size(); ++j) {
        m1[j] = cfg_.beta1 * m1[j] + (1.0 - cfg_.beta1) * g[j];
        m2[j] = cfg_.beta2 * m2[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m1[j] / bc1;
        const double vhat = m2[j] / bc2;
        p[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }
}

// -- checkpoints -------------------------------------------------------------

void save_checkpoint(const std::string& dir, const Mlp& m) {
  fs::create_directories(dir);
  json manifest;
  manifest["input_dim"] = m.input_dim;
  manifest["class_count"] = m.class_count;
  json layers = json::array();
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    json entry;
    entry["activation"] = activation_name(layer_activation(m.layers[l]));
    const std::string stem = "layer_" + std::to_string(l);
    if (const auto* plain = std::get_if<LinearLayer>(&m.layers[l])) {
      entry["type"] = "plain";
      entry["weight"] = stem + "_weight.tnsr";
      entry["bias"] = stem + "_bias.tnsr";
      write_tnsr((fs::path(dir) / (stem + "_weight.tnsr")).string(),
                 plain->weight);
      write_tnsr((fs::path(dir) / (stem + "_bias.tnsr")).string(), plain->bias);
    } else {
      const auto& fac = std::get<FactoredLinearLayer>(m.layers[l]);
      entry["type"] = "factored";
      entry["bias"] = stem + "_bias.tnsr";
      entry["bundle"] = stem + "_mpo";
      write_tnsr((fs::path(dir) / (stem + "_bias.tnsr")).string(), fac.bias);
      mpo::write_bundle((fs::path(dir) / (stem + "_mpo")).string(), fac.factors);
    }
    layers.push_back(std::move(entry));
  }
  manifest["layers"] = std::move(layers);
  std::ofstream os(fs::path(dir) / "manifest.json");
  require(os.good(), ErrKind::IoError, "cannot write checkpoint manifest in ",
          dir);
  os << manifest.dump(2) << "\n";
}

Mlp load_checkpoint(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  require(is.good(), ErrKind::IoError, "cannot open checkpoint manifest in ",
          dir);
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    fail(ErrKind::FormatError, "bad checkpoint manifest: ", e.what());
  }
  Mlp m;
  try {
    m.input_dim = manifest.at("input_dim").get<std::size_t>();
    m.class_count = manifest.at("class_count").get<std::size_t>();
    for (const json& entry : manifest.at("layers")) {
      const std::string type = entry.at("type");
      const Activation act = activation_from_name(entry.at("activation"));
      if (type == "plain") {
        LinearLayer plain;
        plain.weight =
            read_tnsr((fs::path(dir) / entry.at("weight").get<std::string>())
                          .string());
        plain.bias = read_tnsr(
            (fs::path(dir) / entry.at("bias").get<std::string>()).string());
        require(plain.weight.order() == 2 && plain.bias.order() == 1 &&
                    plain.weight.extent(1) == plain.bias.extent(0),
                ErrKind::FormatError, "inconsistent plain layer shapes");
        plain.activation = act;
        m.layers.push_back(std::move(plain));
      } else if (type == "factored") {
        FactoredLinearLayer fac;
        fac.factors = mpo::read_bundle(
            (fs::path(dir) / entry.at("bundle").get<std::string>()).string());
        fac.bias = read_tnsr(
            (fs::path(dir) / entry.at("bias").get<std::string>()).string());
        require(fac.bias.order() == 1 &&
                    fac.bias.extent(0) == fac.factors.plan.cols,
                ErrKind::FormatError, "inconsistent factored layer shapes");
        fac.activation = act;
        m.layers.push_back(std::move(fac));
      } else {
        fail(ErrKind::FormatError, "unknown layer type '", type, "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrKind::FormatError, "bad checkpoint manifest: ", e.what());
  }
  // chain consistency
  std::size_t prev = m.input_dim;
  for (const Layer& l : m.layers) {
    require(layer_in_dim(l) == prev, ErrKind::FormatError,
            "layer dims do not chain");
    prev = layer_out_dim(l);
  }
  require(m.layers.empty() || prev == m.class_count, ErrKind::FormatError,
          "final layer width != class_count");
  return m;
}

}  // namespace opdf::model
