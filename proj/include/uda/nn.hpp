#pragma once

#include "uda/graph.hpp"
#include "uda/rng.hpp"

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace uda {

enum class Activation : std::uint8_t { kRelu, kTanh, kLinear };

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Activation act = Activation::kLinear;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  Index in_dim() const { return layers.front().weight.shape()[0]; }
  Index out_dim() const { return layers.back().weight.shape()[1]; }
};

/// Glorot-uniform weights, zero biases; hidden layers use `hidden`, the final
/// layer is linear.
MlpParams make_mlp(std::span<const Index> dims, Activation hidden, Rng& rng);

enum class AdvKind : std::uint8_t { kNone, kDann, kCdan, kCliv };

AdvKind adv_kind_from_string(const std::string& s);
std::string to_string(AdvKind k);

struct TeacherParams {
  MlpParams phi;
  MlpParams g;
};

/// Feature extractor phi (X->Z), classifier g (Z->logits), optional
/// adversarial discriminator(s) and EMA teacher. h = g o phi.
struct ModelBundle {
  Index input_dim = 0;
  Index repr_dim = 0;
  Index num_classes = 0;
  MlpParams phi;
  MlpParams g;
  AdvKind adv_kind = AdvKind::kNone;
  // One shared-trunk net (dann: Z->1, cliv: Z->C, cdan: Z*C->1), or C
  // separate Z->1 heads when cliv_separate_heads is set.
  std::vector<MlpParams> disc;
  bool cliv_separate_heads = false;

  std::optional<TeacherParams> teacher;

  void init_teacher();  // teacher := deep copy of student
};

struct BundleConfig {
  Index input_dim = 2;
  Index num_classes = 2;
  Index repr_dim = 16;
  std::vector<Index> phi_hidden = {64, 64};
  std::vector<Index> disc_hidden = {64};
  Activation hidden_act = Activation::kRelu;
  AdvKind adv_kind = AdvKind::kNone;
  bool cliv_separate_heads = false;
  bool with_teacher = false;
  Index cdan_dim_cap = 4096;
};

ModelBundle make_bundle(const BundleConfig& cfg, Rng& rng);

// Stable parameter enumeration: phi layers, g layers, then discriminator
// nets in order. Teacher parameters are never trainable.
std::vector<Tensor*> params_of(MlpParams& m);
std::vector<Tensor*> trainable_params(ModelBundle& b);
std::vector<const Tensor*> trainable_params(const ModelBundle& b);

/// FNV-1a over all trainable parameter bytes; used to assert analyses leave
/// models untouched.
std::uint64_t param_hash(const ModelBundle& b);

// ---- frozen (graph-free) evaluation --------------------------------------

struct HForward {
  Tensor z;       // [B, dim(Z)]
  Tensor y_prob;  // [B, C], rows sum to 1
};

Tensor mlp_eval(const MlpParams& m, const Tensor& x);
HForward forward_h(const ModelBundle& b, const Tensor& x, bool use_teacher = false);

/// Sigmoid domain scores: dann [B,1], cliv [B,C], cdan [B,1] on the flattened
/// per-sample outer product z (x) yhat. cliv/cdan require y_prob.
Tensor discriminator_forward(const ModelBundle& b, const Tensor& z, const Tensor* y_prob);

// ---- graph-bound training forward -----------------------------------------

/// Binds every trainable tensor of a bundle to one input node each, so that
/// gradients from all loss terms accumulate per parameter.
class GraphBinding {
 public:
  GraphBinding(Graph& g, ModelBundle& bundle);

  /// Binds to caller-supplied nodes (trainable_params order) instead of
  /// fresh inputs; lets grad_check drive the loss paths while perturbing the
  /// node values independently of the bundle tensors.
  GraphBinding(Graph& g, ModelBundle& bundle, std::span<const Value> external);

  Graph& graph() const { return *graph_; }
  ModelBundle& bundle() const { return *bundle_; }
  Value node_for(const Tensor* param) const;
  const std::vector<Tensor*>& params() const { return params_; }
  std::vector<Tensor> collect_grads() const;  // aligned with params()

 private:
  Graph* graph_;
  ModelBundle* bundle_;
  std::vector<Tensor*> params_;
  std::vector<Value> nodes_;
  std::unordered_map<const Tensor*, std::size_t> index_;
};

/// MLP forward inside the bound graph; `m` must belong to the bound bundle.
Value mlp_apply(const GraphBinding& bind, const MlpParams& m, Value x);

/// Raw discriminator logits inside the bound graph: dann [B,1], cliv [B,C]
/// (shared trunk or concatenated separate heads), cdan [B,1] on z (x) yhat.
Value disc_logits(const GraphBinding& bind, Value disc_input);

// ---- optimizer / schedules / EMA ------------------------------------------

struct SgdConfig {
  double lr0 = 1e-2;
  double momentum = 0.9;
  double alpha_lr = 10.0;
  double beta_lr = 0.75;
};

/// Ganin-style annealing: lr(p) = lr0 / (1 + alpha*p)^beta, p in [0,1].
double lr_schedule(const SgdConfig& cfg, double progress);

class SgdState {
 public:
  SgdState(SgdConfig cfg, std::span<Tensor* const> params);

  const SgdConfig& config() const { return cfg_; }
  long steps() const { return steps_; }

  /// v <- momentum*v - lr*grad; p <- p + v.
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);

 private:
  SgdConfig cfg_;
  std::vector<Tensor> velocity_;
  long steps_ = 0;
};

/// theta' <- beta*theta' + (1-beta)*theta over all phi and g parameters.
void ema_update(ModelBundle& b, double beta_ema);

// ---- checkpoint I/O --------------------------------------------------------

/// JSON checkpoint; tensor payloads are IEEE-754 bit patterns in hex so
/// round-trips are exact.
void save_checkpoint(const ModelBundle& b, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

}  // namespace uda
