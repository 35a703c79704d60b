#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "las/kernels.hpp"
#include "las/tensor.hpp"

// Reverse-mode differentiation over the kernel set. A Tape records one
// forward computation as a list of nodes in creation order; backward visits
// them in reverse creation order, which is a reverse topological order with
// a stable tie-break, so gradient accumulation is deterministic.
namespace las::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  // Scalar value; losses and reductions keep a double-precision copy.
  double item() const;
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// parameter name -> gradient, same shape as the parameter.
using GradStore = std::map<std::string, Tensor>;

class BackwardContext {
 public:
  const Tensor& grad_out() const { return *grad_out_; }
  const Tensor& output() const;
  const Tensor& input(size_t i) const;
  bool needs(size_t i) const;
  void accumulate(size_t i, const Tensor& g);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, int node, const Tensor& grad_out) : tape_(tape), node_(node), grad_out_(&grad_out) {}
  Tape& tape_;
  int node_;
  const Tensor* grad_out_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

class Tape {
 public:
  // A tape with gradients enabled marks the calling thread as recording
  // until it is destroyed; non-differentiable kernels refuse to run then.
  explicit Tape(bool grad_enabled = true);
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  // Leaf that receives a gradient.
  Var leaf(Tensor value);
  // Named parameter leaf. Repeated requests for the same name return the same
  // node, so every use shares one tensor and one gradient.
  Var param(const std::string& name, const Tensor& value, bool trainable = true);
  bool has_param(const std::string& name) const { return params_.count(name) > 0; }
  Var param(const std::string& name) const;

  Var record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn, double precise = NAN);

  // Seeds d out / d out with `seed` (shape must match) and propagates.
  GradStore backward(const Var& out, const Tensor& seed);
  // Seed of one for a single-element output.
  GradStore backward(const Var& out);

  // Gradient accumulated at a node by the last backward; zeros when none.
  Tensor grad(const Var& v) const;
  GradStore param_grads() const;
  const std::string& op(const Var& v) const { return nodes_[static_cast<size_t>(v.id())].op; }

 private:
  friend class Var;
  friend class BackwardContext;

  struct Node {
    std::string op;
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param_name;
    bool trainable = false;
    double precise = NAN;
  };

  void check_owned(const Var& v) const;

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::map<std::string, int> params_;
};

// -------------------------------------------------------------- operations

Var conv2d(const Var& x, const Var& kernel, const Var* bias, const Conv2dOptions& opt = {});
Var conv3d(const Var& x, const Var& kernel, const Var* bias, const Conv3dOptions& opt = {});
Var depthwise_conv2d(const Var& x, const Var& kernel, const Var* bias, std::array<int64_t, 2> stride = {1, 1},
                     std::array<int64_t, 2> padding = {0, 0});
// mean/var are treated as constants (running statistics).
Var normalize(const Var& x, NormKind kind, const Var& scale, const Var& shift, const Var* mean = nullptr,
              const Var* var = nullptr);
Var activation(const Var& x, ActKind kind);
Var linear_resize_axis(const Var& x, int axis, int64_t out_len, bool align_corners);
Var bilinear_resize(const Var& x, int64_t out_h, int64_t out_w, bool align_corners);
Var softmax_axis(const Var& x, int axis);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var concat0(const std::vector<Var>& parts);
Var reshape(const Var& x, Shape shape);
// Scalar sum of all elements.
Var sum(const Var& x);
// Scalar sum_i weights[i] * x[i], accumulated in double.
Var weighted_sum(const Var& x, const Tensor& weights);
// Scalar sum_k coeffs[k] * terms[k] over scalar terms.
Var combine(const std::vector<std::pair<double, Var>>& terms);

Var correlation_volume(const Var& left, const Var& right, int64_t levels);
Var disparity_expectation(const Var& prob);
Var convex_upsample(const Var& disp, const Var& mask);
Var disparity_loss(const Var& pred, const Tensor& gt, const Tensor& mask);
Var feature_align_loss(const Var& teacher, const Var& student);

// ------------------------------------------------------------- utilities

struct Recording {
  std::unique_ptr<Tape> tape;
  Var output;
};
// Runs `fn` on a fresh gradient-enabled tape.
Recording record(const std::function<Var(Tape&)>& fn);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  int worst_param = -1;          // index into params
  int64_t worst_index = -1;      // flat coordinate within that param
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int64_t checked = 0;
  bool passed = true;
};

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares reverse-mode gradients of a scalar function against central
// differences with step eps on `samples` randomly chosen coordinates (all
// coordinates when samples < 0 or exceeds the total). The error per
// coordinate is |analytic - numeric| / max(1, |numeric|).
FiniteDiffReport finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& params, double eps,
                                   double tolerance, int64_t samples = -1, uint64_t seed = 0);

}  // namespace las::ad
