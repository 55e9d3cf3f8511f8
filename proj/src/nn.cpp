#include "uda/nn.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace uda {

using nlohmann::json;

MlpParams make_mlp(std::span<const Index> dims, Activation hidden, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output dims");
  MlpParams m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const Index fan_in = dims[i], fan_out = dims[i + 1];
    DenseLayer layer;
    layer.weight = Tensor({fan_in, fan_out});
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Index k = 0; k < layer.weight.numel(); ++k) layer.weight[k] = rng.uniform(-bound, bound);
    layer.bias = Tensor({fan_out});
    layer.act = (i + 2 < dims.size()) ? hidden : Activation::kLinear;
    m.layers.push_back(std::move(layer));
  }
  return m;
}

AdvKind adv_kind_from_string(const std::string& s) {
  if (s == "none") return AdvKind::kNone;
  if (s == "dann") return AdvKind::kDann;
  if (s == "cdan") return AdvKind::kCdan;
  if (s == "cliv") return AdvKind::kCliv;
  throw std::invalid_argument("unknown adversarial kind: " + s);
}

std::string to_string(AdvKind k) {
  switch (k) {
    case AdvKind::kNone: return "none";
    case AdvKind::kDann: return "dann";
    case AdvKind::kCdan: return "cdan";
    case AdvKind::kCliv: return "cliv";
  }
  return "?";
}

void ModelBundle::init_teacher() { teacher = TeacherParams{phi, g}; }

ModelBundle make_bundle(const BundleConfig& cfg, Rng& rng) {
  ModelBundle b;
  b.input_dim = cfg.input_dim;
  b.repr_dim = cfg.repr_dim;
  b.num_classes = cfg.num_classes;
  b.adv_kind = cfg.adv_kind;
  b.cliv_separate_heads = cfg.cliv_separate_heads;

  std::vector<Index> phi_dims{cfg.input_dim};
  phi_dims.insert(phi_dims.end(), cfg.phi_hidden.begin(), cfg.phi_hidden.end());
  phi_dims.push_back(cfg.repr_dim);
  Rng phi_rng = rng.split(1);
  b.phi = make_mlp(phi_dims, cfg.hidden_act, phi_rng);

  std::vector<Index> g_dims{cfg.repr_dim, cfg.num_classes};
  Rng g_rng = rng.split(2);
  b.g = make_mlp(g_dims, Activation::kRelu, g_rng);

  auto disc_dims = [&](Index in, Index out) {
    std::vector<Index> d{in};
    d.insert(d.end(), cfg.disc_hidden.begin(), cfg.disc_hidden.end());
    d.push_back(out);
    return d;
  };
  Rng d_rng = rng.split(3);
  switch (cfg.adv_kind) {
    case AdvKind::kNone:
      break;
    case AdvKind::kDann:
      b.disc.push_back(make_mlp(disc_dims(cfg.repr_dim, 1), cfg.hidden_act, d_rng));
      break;
    case AdvKind::kCdan: {
      const Index in = cfg.repr_dim * cfg.num_classes;
      if (in > cfg.cdan_dim_cap)
        throw std::invalid_argument("make_bundle: cdan input dim exceeds cap");
      b.disc.push_back(make_mlp(disc_dims(in, 1), cfg.hidden_act, d_rng));
      break;
    }
    case AdvKind::kCliv:
      if (cfg.cliv_separate_heads) {
        for (Index c = 0; c < cfg.num_classes; ++c) {
          Rng head_rng = d_rng.split(static_cast<std::uint64_t>(c));
          b.disc.push_back(make_mlp(disc_dims(cfg.repr_dim, 1), cfg.hidden_act, head_rng));
        }
      } else {
        b.disc.push_back(make_mlp(disc_dims(cfg.repr_dim, cfg.num_classes), cfg.hidden_act, d_rng));
      }
      break;
  }
  if (cfg.with_teacher) b.init_teacher();
  return b;
}

std::vector<Tensor*> params_of(MlpParams& m) {
  std::vector<Tensor*> out;
  for (DenseLayer& l : m.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<Tensor*> trainable_params(ModelBundle& b) {
  std::vector<Tensor*> out = params_of(b.phi);
  for (Tensor* p : params_of(b.g)) out.push_back(p);
  for (MlpParams& d : b.disc)
    for (Tensor* p : params_of(d)) out.push_back(p);
  return out;
}

std::vector<const Tensor*> trainable_params(const ModelBundle& b) {
  auto mut = trainable_params(const_cast<ModelBundle&>(b));
  return {mut.begin(), mut.end()};
}

std::uint64_t param_hash(const ModelBundle& b) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const Tensor& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.array().data());
    for (Index i = 0; i < t.numel() * static_cast<Index>(sizeof(double)); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Tensor* p : trainable_params(b)) feed(*p);
  if (b.teacher) {
    for (const DenseLayer& l : b.teacher->phi.layers) { feed(l.weight); feed(l.bias); }
    for (const DenseLayer& l : b.teacher->g.layers) { feed(l.weight); feed(l.bias); }
  }
  return h;
}

// ---- frozen evaluation ------------------------------------------------------

namespace {

Matrix apply_activation(Matrix h, Activation act) {
  switch (act) {
    case Activation::kRelu: return h.array().max(0.0).matrix();
    case Activation::kTanh: return h.array().tanh().matrix();
    case Activation::kLinear: return h;
  }
  return h;
}

}  // namespace

Tensor mlp_eval(const MlpParams& m, const Tensor& x) {
  Matrix h = x.as_matrix();
  for (const DenseLayer& l : m.layers) {
    h = h * l.weight.as_matrix();
    h.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(l.bias.array().data(), l.bias.numel());
    h = apply_activation(std::move(h), l.act);
  }
  return Tensor::from_matrix(h);
}

HForward forward_h(const ModelBundle& b, const Tensor& x, bool use_teacher) {
  if (x.cols() != b.input_dim) throw std::invalid_argument("forward_h: input width mismatch");
  const MlpParams& phi = (use_teacher && b.teacher) ? b.teacher->phi : b.phi;
  const MlpParams& g = (use_teacher && b.teacher) ? b.teacher->g : b.g;
  HForward out;
  out.z = mlp_eval(phi, x);
  Tensor logits = mlp_eval(g, out.z);
  out.y_prob = Tensor(logits.shape());
  softmax_rows(logits, out.y_prob, false);
  return out;
}

Tensor discriminator_forward(const ModelBundle& b, const Tensor& z, const Tensor* y_prob) {
  auto scores = [](Tensor logits) {
    logits.array() = 1.0 / (1.0 + (-logits.array()).exp());
    return logits;
  };
  switch (b.adv_kind) {
    case AdvKind::kNone:
      throw std::invalid_argument("discriminator_forward: bundle has no discriminator");
    case AdvKind::kDann:
      return scores(mlp_eval(b.disc[0], z));
    case AdvKind::kCliv: {
      if (y_prob == nullptr) throw std::invalid_argument("discriminator_forward: cliv needs y_prob");
      if (!b.cliv_separate_heads) return scores(mlp_eval(b.disc[0], z));
      Matrix out(z.rows(), b.num_classes);
      for (Index c = 0; c < b.num_classes; ++c)
        out.col(c) = mlp_eval(b.disc[static_cast<std::size_t>(c)], z).as_matrix().col(0);
      return scores(Tensor::from_matrix(out));
    }
    case AdvKind::kCdan: {
      if (y_prob == nullptr) throw std::invalid_argument("discriminator_forward: cdan needs y_prob");
      const Index bsz = z.rows(), dz = z.cols(), c = y_prob->cols();
      Tensor feat({bsz, dz * c});
      for (Index s = 0; s < bsz; ++s)
        for (Index i = 0; i < dz; ++i)
          for (Index j = 0; j < c; ++j)
            feat[s * dz * c + i * c + j] = z[s * dz + i] * (*y_prob)[s * c + j];
      return scores(mlp_eval(b.disc[0], feat));
    }
  }
  throw std::logic_error("discriminator_forward: unreachable");
}

// ---- graph binding ----------------------------------------------------------

GraphBinding::GraphBinding(Graph& g, ModelBundle& bundle) : graph_(&g), bundle_(&bundle) {
  params_ = trainable_params(bundle);
  nodes_.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    nodes_.push_back(g.input(*params_[i]));
    index_.emplace(params_[i], i);
  }
}

GraphBinding::GraphBinding(Graph& g, ModelBundle& bundle, std::span<const Value> external)
    : graph_(&g), bundle_(&bundle) {
  params_ = trainable_params(bundle);
  if (external.size() != params_.size())
    throw std::invalid_argument("GraphBinding: external node count mismatch");
  nodes_.assign(external.begin(), external.end());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!g.value(nodes_[i].id).same_shape(*params_[i]))
      throw std::invalid_argument("GraphBinding: external node shape mismatch");
    index_.emplace(params_[i], i);
  }
}

Value GraphBinding::node_for(const Tensor* param) const {
  auto it = index_.find(param);
  if (it == index_.end()) throw std::invalid_argument("GraphBinding: tensor is not bound");
  return nodes_[it->second];
}

std::vector<Tensor> GraphBinding::collect_grads() const {
  std::vector<Tensor> out;
  out.reserve(nodes_.size());
  for (const Value& v : nodes_) out.push_back(graph_->grad(v.id));
  return out;
}

Value mlp_apply(const GraphBinding& bind, const MlpParams& m, Value x) {
  Value h = x;
  for (const DenseLayer& l : m.layers) {
    h = add_rowvec(matmul(h, bind.node_for(&l.weight)), bind.node_for(&l.bias));
    switch (l.act) {
      case Activation::kRelu: h = relu(h); break;
      case Activation::kTanh: h = tanh(h); break;
      case Activation::kLinear: break;
    }
  }
  return h;
}

Value disc_logits(const GraphBinding& bind, Value disc_input) {
  const ModelBundle& b = bind.bundle();
  if (b.disc.empty()) throw std::invalid_argument("disc_logits: bundle has no discriminator");
  if (b.adv_kind == AdvKind::kCliv && b.cliv_separate_heads) {
    Value out = mlp_apply(bind, b.disc[0], disc_input);
    for (std::size_t c = 1; c < b.disc.size(); ++c)
      out = concat_cols(out, mlp_apply(bind, b.disc[c], disc_input));
    return out;
  }
  return mlp_apply(bind, b.disc[0], disc_input);
}

// ---- optimizer / EMA --------------------------------------------------------

double lr_schedule(const SgdConfig& cfg, double progress) {
  if (progress < 0.0 || progress > 1.0) throw std::invalid_argument("lr_schedule: progress outside [0,1]");
  return cfg.lr0 / std::pow(1.0 + cfg.alpha_lr * progress, cfg.beta_lr);
}

SgdState::SgdState(SgdConfig cfg, std::span<Tensor* const> params) : cfg_(cfg) {
  velocity_.reserve(params.size());
  for (const Tensor* p : params) velocity_.emplace_back(p->shape());
}

void SgdState::step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  if (params.size() != velocity_.size() || grads.size() != velocity_.size())
    throw std::invalid_argument("sgd_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].all_finite()) throw std::invalid_argument("sgd_step: nonfinite gradient");
    if (!grads[i].same_shape(*params[i])) throw std::invalid_argument("sgd_step: gradient shape mismatch");
    velocity_[i].array() = cfg_.momentum * velocity_[i].array() - lr * grads[i].array();
    params[i]->array() += velocity_[i].array();
  }
  ++steps_;
}

void ema_update(ModelBundle& b, double beta_ema) {
  if (!b.teacher) throw std::invalid_argument("ema_update: bundle has no teacher");
  auto blend = [beta_ema](MlpParams& teacher, const MlpParams& student) {
    for (std::size_t i = 0; i < teacher.layers.size(); ++i) {
      teacher.layers[i].weight.array() =
          beta_ema * teacher.layers[i].weight.array() + (1.0 - beta_ema) * student.layers[i].weight.array();
      teacher.layers[i].bias.array() =
          beta_ema * teacher.layers[i].bias.array() + (1.0 - beta_ema) * student.layers[i].bias.array();
    }
  };
  blend(b.teacher->phi, b.phi);
  blend(b.teacher->g, b.g);
}

// ---- checkpoint I/O ----------------------------------------------------------

namespace {

std::string tensor_to_hex(const Tensor& t) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(static_cast<std::size_t>(t.numel()) * 16);
  for (Index i = 0; i < t.numel(); ++i) {
    const double v = t[i];
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int shift = 60; shift >= 0; shift -= 4) out.push_back(digits[(bits >> shift) & 0xF]);
  }
  return out;
}

Tensor tensor_from_hex(const std::vector<Index>& shape, const std::string& hex) {
  Tensor t(shape);
  if (hex.size() != static_cast<std::size_t>(t.numel()) * 16)
    throw std::invalid_argument("checkpoint: tensor payload length mismatch");
  for (Index i = 0; i < t.numel(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 16; ++k) {
      const char c = hex[static_cast<std::size_t>(i) * 16 + static_cast<std::size_t>(k)];
      int v;
      if (c >= '0' && c <= '9') v = c - '0';
      else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
      else throw std::invalid_argument("checkpoint: bad hex digit");
      bits = (bits << 4) | static_cast<std::uint64_t>(v);
    }
    std::memcpy(&t[i], &bits, sizeof(bits));
  }
  return t;
}

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"bits", tensor_to_hex(t)}};
}

Tensor tensor_from_json(const json& j) {
  return tensor_from_hex(j.at("shape").get<std::vector<Index>>(), j.at("bits").get<std::string>());
}

json mlp_to_json(const MlpParams& m) {
  json layers = json::array();
  for (const DenseLayer& l : m.layers) {
    layers.push_back(json{{"weight", tensor_to_json(l.weight)},
                          {"bias", tensor_to_json(l.bias)},
                          {"act", static_cast<int>(l.act)}});
  }
  return layers;
}

MlpParams mlp_from_json(const json& j) {
  MlpParams m;
  for (const json& lj : j) {
    DenseLayer l;
    l.weight = tensor_from_json(lj.at("weight"));
    l.bias = tensor_from_json(lj.at("bias"));
    l.act = static_cast<Activation>(lj.at("act").get<int>());
    m.layers.push_back(std::move(l));
  }
  return m;
}

constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const ModelBundle& b, const std::string& path) {
  json j;
  j["version"] = kCheckpointVersion;
  j["input_dim"] = b.input_dim;
  j["repr_dim"] = b.repr_dim;
  j["num_classes"] = b.num_classes;
  j["adv_kind"] = to_string(b.adv_kind);
  j["cliv_separate_heads"] = b.cliv_separate_heads;
  j["phi"] = mlp_to_json(b.phi);
  j["g"] = mlp_to_json(b.g);
  json disc = json::array();
  for (const MlpParams& d : b.disc) disc.push_back(mlp_to_json(d));
  j["disc"] = disc;
  if (b.teacher) {
    j["teacher"] = json{{"phi", mlp_to_json(b.teacher->phi)}, {"g", mlp_to_json(b.teacher->g)}};
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump(2) << "\n";
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json j = json::parse(in);
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version");
  ModelBundle b;
  b.input_dim = j.at("input_dim").get<Index>();
  b.repr_dim = j.at("repr_dim").get<Index>();
  b.num_classes = j.at("num_classes").get<Index>();
  b.adv_kind = adv_kind_from_string(j.at("adv_kind").get<std::string>());
  b.cliv_separate_heads = j.at("cliv_separate_heads").get<bool>();
  b.phi = mlp_from_json(j.at("phi"));
  b.g = mlp_from_json(j.at("g"));
  for (const json& dj : j.at("disc")) b.disc.push_back(mlp_from_json(dj));
  if (j.contains("teacher")) {
    TeacherParams t;
    t.phi = mlp_from_json(j.at("teacher").at("phi"));
    t.g = mlp_from_json(j.at("teacher").at("g"));
    b.teacher = std::move(t);
  }
  return b;
}

}  // namespace uda
