#include "las/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "las/losses.hpp"
#include "las/rng.hpp"
#include "las/stereo_kernels.hpp"

namespace las::ad {

// ------------------------------------------------------------------ Var

const Tensor& Var::value() const {
  if (!tape_) throw Error("Var: use of an empty handle");
  return tape_->nodes_[static_cast<size_t>(id_)].value;
}

double Var::item() const {
  const auto& node = tape_->nodes_[static_cast<size_t>(id_)];
  if (!std::isnan(node.precise)) return node.precise;
  if (node.value.numel() != 1) throw ShapeError("Var::item on non-scalar " + shape_str(node.value.shape()));
  return node.value[0];
}

// ------------------------------------------------------- BackwardContext

const Tensor& BackwardContext::output() const { return tape_.nodes_[static_cast<size_t>(node_)].value; }

const Tensor& BackwardContext::input(size_t i) const {
  const auto& node = tape_.nodes_[static_cast<size_t>(node_)];
  return tape_.nodes_[static_cast<size_t>(node.inputs.at(i))].value;
}

bool BackwardContext::needs(size_t i) const {
  const auto& node = tape_.nodes_[static_cast<size_t>(node_)];
  return tape_.nodes_[static_cast<size_t>(node.inputs.at(i))].requires_grad;
}

void BackwardContext::accumulate(size_t i, const Tensor& g) {
  const auto& node = tape_.nodes_[static_cast<size_t>(node_)];
  const int target = node.inputs.at(i);
  auto& slot = tape_.grads_[static_cast<size_t>(target)];
  const Tensor& v = tape_.nodes_[static_cast<size_t>(target)].value;
  require_shape(g, v.shape(), "backward accumulate");
  if (slot.empty()) {
    slot = g;
  } else {
    for (int64_t k = 0; k < g.numel(); ++k) slot[k] += g[k];
  }
}

// ----------------------------------------------------------------- Tape

Tape::Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {
  if (grad_enabled_) ++detail::recording_depth();
}

Tape::~Tape() {
  if (grad_enabled_) --detail::recording_depth();
}

void Tape::check_owned(const Var& v) const {
  if (&v.tape() != this) throw Error("Var belongs to a different tape");
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(const std::string& name, const Tensor& value, bool trainable) {
  if (auto it = params_.find(name); it != params_.end()) {
    const auto& existing = nodes_[static_cast<size_t>(it->second)];
    require_shape(value, existing.value.shape(), ("param " + name).c_str());
    return Var(this, it->second);
  }
  Node n;
  n.op = "param";
  n.value = value;
  n.requires_grad = grad_enabled_ && trainable;
  n.param_name = name;
  n.trainable = trainable;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  params_.emplace(name, id);
  return Var(this, id);
}

Var Tape::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("tape has no parameter named " + name);
  return Var(const_cast<Tape*>(this), it->second);
}

Var Tape::record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn, double precise) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.precise = precise;
  bool any = false;
  for (const Var& v : inputs) {
    check_owned(v);
    any = any || nodes_[static_cast<size_t>(v.id())].requires_grad;
  }
  if (grad_enabled_ && any) {
    n.requires_grad = true;
    n.backward = std::move(fn);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) n.inputs.push_back(v.id());
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

GradStore Tape::backward(const Var& out, const Tensor& seed) {
  check_owned(out);
  if (!grad_enabled_) throw Error("backward on a tape recorded without gradients");
  require_shape(seed, out.value().shape(), "backward seed");
  grads_.assign(nodes_.size(), Tensor());
  grads_[static_cast<size_t>(out.id())] = seed;
  for (int i = out.id(); i >= 0; --i) {
    const size_t k = static_cast<size_t>(i);
    if (grads_[k].empty() || !nodes_[k].requires_grad || !nodes_[k].backward) continue;
    BackwardContext ctx(*this, i, grads_[k]);
    nodes_[k].backward(ctx);
    // Interior gradients are no longer needed once propagated.
    if (nodes_[k].param_name.empty() && i != out.id() && nodes_[k].op != "leaf") grads_[k] = Tensor();
  }
  return param_grads();
}

GradStore Tape::backward(const Var& out) {
  if (out.value().numel() != 1) throw ShapeError("backward without seed needs a single-element output");
  return backward(out, Tensor::ones(out.value().shape()));
}

Tensor Tape::grad(const Var& v) const {
  check_owned(v);
  const size_t k = static_cast<size_t>(v.id());
  if (k < grads_.size() && !grads_[k].empty()) return grads_[k];
  return Tensor::zeros(nodes_[k].value.shape());
}

GradStore Tape::param_grads() const {
  GradStore out;
  for (const auto& [name, id] : params_) {
    const auto& node = nodes_[static_cast<size_t>(id)];
    if (!node.trainable) continue;
    const size_t k = static_cast<size_t>(id);
    out.emplace(name, k < grads_.size() && !grads_[k].empty() ? grads_[k] : Tensor::zeros(node.value.shape()));
  }
  return out;
}

// ----------------------------------------------------------- operations

namespace {

Tape& tape_of(const Var& v) { return v.tape(); }

}  // namespace

Var conv2d(const Var& x, const Var& kernel, const Var* bias, const Conv2dOptions& opt) {
  Tensor y = las::conv2d(x.value(), kernel.value(), bias ? &bias->value() : nullptr, opt);
  std::vector<Var> in{x, kernel};
  if (bias) in.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return tape_of(x).record("conv2d", std::move(y), in, [opt, has_bias](BackwardContext& c) {
    ConvGrads g = las::conv2d_backward(c.input(0), c.input(1), has_bias, c.grad_out(), opt);
    if (c.needs(0)) c.accumulate(0, g.input);
    if (c.needs(1)) c.accumulate(1, g.kernel);
    if (has_bias && c.needs(2)) c.accumulate(2, g.bias);
  });
}

Var conv3d(const Var& x, const Var& kernel, const Var* bias, const Conv3dOptions& opt) {
  Tensor y = las::conv3d(x.value(), kernel.value(), bias ? &bias->value() : nullptr, opt);
  std::vector<Var> in{x, kernel};
  if (bias) in.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return tape_of(x).record("conv3d", std::move(y), in, [opt, has_bias](BackwardContext& c) {
    ConvGrads g = las::conv3d_backward(c.input(0), c.input(1), has_bias, c.grad_out(), opt);
    if (c.needs(0)) c.accumulate(0, g.input);
    if (c.needs(1)) c.accumulate(1, g.kernel);
    if (has_bias && c.needs(2)) c.accumulate(2, g.bias);
  });
}

Var depthwise_conv2d(const Var& x, const Var& kernel, const Var* bias, std::array<int64_t, 2> stride,
                     std::array<int64_t, 2> padding) {
  if (kernel.value().rank() != 4 || kernel.value().dim(0) != x.value().dim(0) || kernel.value().dim(1) != 1)
    throw ShapeError("depthwise_conv2d: kernel must be [C,1,kh,kw]");
  return conv2d(x, kernel, bias, Conv2dOptions{stride, padding, x.value().dim(0)});
}

Var normalize(const Var& x, NormKind kind, const Var& scale_v, const Var& shift_v, const Var* mean, const Var* var) {
  NormParams p{scale_v.value(), shift_v.value(), mean ? mean->value() : Tensor(), var ? var->value() : Tensor()};
  if (kind == NormKind::BatchNormInference && (!mean || !var))
    throw ShapeError("normalize: batch-norm-inference needs running mean and var");
  Tensor y = las::normalize(x.value(), kind, p);
  return tape_of(x).record("normalize", std::move(y), {x, scale_v, shift_v},
                           [kind, p = std::move(p)](BackwardContext& c) {
                             NormGrads g = las::normalize_backward(c.input(0), kind, p, c.grad_out());
                             if (c.needs(0)) c.accumulate(0, g.input);
                             if (c.needs(1)) c.accumulate(1, g.scale);
                             if (c.needs(2)) c.accumulate(2, g.shift);
                           });
}

Var activation(const Var& x, ActKind kind) {
  Tensor y = las::activation(x.value(), kind);
  return tape_of(x).record(kind == ActKind::Relu6 ? "relu6" : "gelu", std::move(y), {x},
                           [kind](BackwardContext& c) {
                             c.accumulate(0, las::activation_backward(c.input(0), kind, c.grad_out()));
                           });
}

Var linear_resize_axis(const Var& x, int axis, int64_t out_len, bool align_corners) {
  Tensor y = las::linear_resize_axis(x.value(), axis, out_len, align_corners);
  return tape_of(x).record("linear_resize_axis", std::move(y), {x}, [axis, align_corners](BackwardContext& c) {
    c.accumulate(0, las::linear_resize_axis_backward(c.input(0).shape(), axis, align_corners, c.grad_out()));
  });
}

Var bilinear_resize(const Var& x, int64_t out_h, int64_t out_w, bool align_corners) {
  Tensor y = las::bilinear_resize(x.value(), out_h, out_w, align_corners);
  return tape_of(x).record("bilinear_resize", std::move(y), {x}, [align_corners](BackwardContext& c) {
    c.accumulate(0, las::bilinear_resize_backward(c.input(0).shape(), align_corners, c.grad_out()));
  });
}

Var softmax_axis(const Var& x, int axis) {
  Tensor y = las::softmax_axis(x.value(), axis);
  return tape_of(x).record("softmax_axis", std::move(y), {x}, [axis](BackwardContext& c) {
    c.accumulate(0, las::softmax_axis_backward(c.output(), axis, c.grad_out()));
  });
}

Var add(const Var& a, const Var& b) {
  return tape_of(a).record("add", las::add(a.value(), b.value()), {a, b}, [](BackwardContext& c) {
    if (c.needs(0)) c.accumulate(0, c.grad_out());
    if (c.needs(1)) c.accumulate(1, c.grad_out());
  });
}

Var sub(const Var& a, const Var& b) {
  return tape_of(a).record("sub", las::sub(a.value(), b.value()), {a, b}, [](BackwardContext& c) {
    if (c.needs(0)) c.accumulate(0, c.grad_out());
    if (c.needs(1)) c.accumulate(1, las::scale(c.grad_out(), -1.0f));
  });
}

Var mul(const Var& a, const Var& b) {
  return tape_of(a).record("mul", las::mul(a.value(), b.value()), {a, b}, [](BackwardContext& c) {
    if (c.needs(0)) c.accumulate(0, las::mul(c.grad_out(), c.input(1)));
    if (c.needs(1)) c.accumulate(1, las::mul(c.grad_out(), c.input(0)));
  });
}

Var scale(const Var& a, float s) {
  return tape_of(a).record("scale", las::scale(a.value(), s), {a},
                           [s](BackwardContext& c) { c.accumulate(0, las::scale(c.grad_out(), s)); });
}

Var concat0(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat0: no inputs");
  std::vector<const Tensor*> ptrs;
  std::vector<int64_t> sizes;
  for (const Var& p : parts) {
    ptrs.push_back(&p.value());
    sizes.push_back(p.value().numel());
  }
  return tape_of(parts.front())
      .record("concat0", las::concat0(ptrs), parts, [sizes](BackwardContext& c) {
        int64_t off = 0;
        for (size_t i = 0; i < sizes.size(); ++i) {
          if (c.needs(i)) {
            Tensor g(c.input(i).shape());
            std::copy(c.grad_out().data().begin() + off, c.grad_out().data().begin() + off + sizes[i],
                      g.data().begin());
            c.accumulate(i, g);
          }
          off += sizes[i];
        }
      });
}

Var reshape(const Var& x, Shape shape) {
  return tape_of(x).record("reshape", x.value().reshaped(std::move(shape)), {x}, [](BackwardContext& c) {
    c.accumulate(0, c.grad_out().reshaped(c.input(0).shape()));
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (float v : x.value().data()) s += v;
  return tape_of(x).record(
      "sum", Tensor::scalar(static_cast<float>(s)), {x},
      [](BackwardContext& c) { c.accumulate(0, Tensor::full(c.input(0).shape(), c.grad_out()[0])); }, s);
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require_shape(weights, x.value().shape(), "weighted_sum weights");
  double s = 0.0;
  for (int64_t i = 0; i < weights.numel(); ++i) s += static_cast<double>(weights[i]) * x.value()[i];
  return tape_of(x).record(
      "weighted_sum", Tensor::scalar(static_cast<float>(s)), {x},
      [weights](BackwardContext& c) { c.accumulate(0, las::scale(weights, c.grad_out()[0])); }, s);
}

Var combine(const std::vector<std::pair<double, Var>>& terms) {
  if (terms.empty()) throw ShapeError("combine: no terms");
  double s = 0.0;
  std::vector<Var> in;
  std::vector<double> coeffs;
  for (const auto& [k, v] : terms) {
    s += k * v.item();
    in.push_back(v);
    coeffs.push_back(k);
  }
  return tape_of(in.front())
      .record(
          "combine", Tensor::scalar(static_cast<float>(s)), in,
          [coeffs](BackwardContext& c) {
            for (size_t i = 0; i < coeffs.size(); ++i)
              if (c.needs(i)) c.accumulate(i, Tensor::scalar(static_cast<float>(coeffs[i] * c.grad_out()[0])));
          },
          s);
}

Var correlation_volume(const Var& left, const Var& right, int64_t levels) {
  Tensor y = las::correlation_volume(left.value(), right.value(), levels);
  return tape_of(left).record("correlation_volume", std::move(y), {left, right}, [](BackwardContext& c) {
    CorrelationGrads g = las::correlation_volume_backward(c.input(0), c.input(1), c.grad_out());
    if (c.needs(0)) c.accumulate(0, g.left);
    if (c.needs(1)) c.accumulate(1, g.right);
  });
}

Var disparity_expectation(const Var& prob) {
  Tensor y = las::disparity_expectation(prob.value());
  return tape_of(prob).record("disparity_expectation", std::move(y), {prob}, [](BackwardContext& c) {
    c.accumulate(0, las::disparity_expectation_backward(c.input(0).shape(), c.grad_out()));
  });
}

Var convex_upsample(const Var& disp, const Var& mask) {
  Tensor y = las::convex_upsample(disp.value(), mask.value());
  return tape_of(disp).record("convex_upsample", std::move(y), {disp, mask}, [](BackwardContext& c) {
    ConvexUpsampleGrads g = las::convex_upsample_backward(c.input(0), c.input(1), c.grad_out());
    if (c.needs(0)) c.accumulate(0, g.disp);
    if (c.needs(1)) c.accumulate(1, g.mask);
  });
}

Var disparity_loss(const Var& pred, const Tensor& gt, const Tensor& mask) {
  const double l = las::disparity_loss(pred.value(), gt, mask);
  return tape_of(pred).record(
      "disparity_loss", Tensor::scalar(static_cast<float>(l)), {pred},
      [gt, mask](BackwardContext& c) {
        c.accumulate(0, las::disparity_loss_backward(c.input(0), gt, mask, c.grad_out()[0]));
      },
      l);
}

Var feature_align_loss(const Var& teacher, const Var& student) {
  const double l = las::feature_align_loss(teacher.value(), student.value());
  return tape_of(student).record(
      "feature_align_loss", Tensor::scalar(static_cast<float>(l)), {teacher, student},
      [](BackwardContext& c) {
        FeatureAlignGrads g = las::feature_align_loss_backward(c.input(0), c.input(1), c.grad_out()[0]);
        if (c.needs(0)) c.accumulate(0, g.teacher);
        if (c.needs(1)) c.accumulate(1, g.student);
      },
      l);
}

// ------------------------------------------------------------ utilities

Recording record(const std::function<Var(Tape&)>& fn) {
  Recording r{std::make_unique<Tape>(true), Var()};
  r.output = fn(*r.tape);
  return r;
}

FiniteDiffReport finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& params, double eps,
                                   double tolerance, int64_t samples, uint64_t seed) {
  std::vector<Tensor> analytic;
  {
    Tape tape(true);
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p));
    Var out = fn(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  int64_t total = 0;
  for (const auto& p : params) total += p.numel();
  std::vector<std::pair<int, int64_t>> coords;
  if (samples < 0 || samples >= total) {
    for (size_t i = 0; i < params.size(); ++i)
      for (int64_t k = 0; k < params[i].numel(); ++k) coords.emplace_back(static_cast<int>(i), k);
  } else {
    SplitMix64 rng(seed);
    for (int64_t s = 0; s < samples; ++s) {
      int64_t flat = rng.uniform_int(0, total - 1);
      int pi = 0;
      while (flat >= params[static_cast<size_t>(pi)].numel()) flat -= params[static_cast<size_t>(pi++)].numel();
      coords.emplace_back(pi, flat);
    }
  }

  auto evaluate = [&](const std::vector<Tensor>& ps) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const auto& p : ps) vars.push_back(tape.leaf(p));
    return fn(tape, vars).item();
  };

  FiniteDiffReport rep;
  std::vector<Tensor> work = params;
  for (const auto& [pi, k] : coords) {
    Tensor& t = work[static_cast<size_t>(pi)];
    const float orig = t[k];
    t[k] = static_cast<float>(orig + eps);
    const double fp = evaluate(work);
    const float xp = t[k];
    t[k] = static_cast<float>(orig - eps);
    const double fm = evaluate(work);
    const float xm = t[k];
    t[k] = orig;
    // Divide by the step actually taken after float rounding.
    const double numeric = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
    const double a = analytic[static_cast<size_t>(pi)][k];
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
    ++rep.checked;
    if (err > rep.max_rel_error || rep.worst_param < 0) {
      rep.max_rel_error = err;
      rep.worst_param = pi;
      rep.worst_index = k;
      rep.worst_analytic = a;
      rep.worst_numeric = numeric;
    }
  }
  rep.passed = rep.max_rel_error <= tolerance;
  return rep;
}

}  // namespace las::ad
