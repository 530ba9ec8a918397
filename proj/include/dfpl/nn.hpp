#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include <fmt/format.h>

#include "dfpl/prototype_set.hpp"
#include "dfpl/random.hpp"
#include "dfpl/types.hpp"

namespace dfpl {

/// Affine map y = W x + b; W is out x in.
template <typename Scalar>
struct DenseLayer {
  MatX<Scalar> weight;
  VecX<Scalar> bias;

  [[nodiscard]] Eigen::Index in_dim() const { return weight.cols(); }
  [[nodiscard]] Eigen::Index out_dim() const { return weight.rows(); }
};

struct ParamsTag {};
struct GradientsTag {};

/// Feature extractor (dense layers, ReLU after each) followed by a linear
/// classifier. The tag keeps parameters and gradients distinct types.
template <typename Scalar, typename Tag>
struct LayerStack {
  std::vector<DenseLayer<Scalar>> extractor;
  DenseLayer<Scalar> classifier;

  [[nodiscard]] Eigen::Index input_dim() const { return extractor.front().in_dim(); }
  [[nodiscard]] Eigen::Index feature_dim() const { return extractor.back().out_dim(); }
  [[nodiscard]] Eigen::Index num_classes() const { return classifier.out_dim(); }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : extractor) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n + static_cast<std::size_t>(classifier.weight.size() + classifier.bias.size());
  }

  /// Throws DimensionError unless every layer chains into the next.
  void validate() const {
    if (extractor.empty()) throw DimensionError("feature extractor needs at least one layer");
    auto check = [](const DenseLayer<Scalar>& l, Eigen::Index in, std::size_t idx) {
      if (l.in_dim() != in || l.bias.size() != l.out_dim())
        throw DimensionError(fmt::format("layer {} has shape {}x{} with bias {}, expected input {}", idx,
                                         l.out_dim(), l.in_dim(), l.bias.size(), in));
    };
    Eigen::Index in = extractor.front().in_dim();
    for (std::size_t i = 0; i < extractor.size(); ++i) {
      check(extractor[i], in, i);
      in = extractor[i].out_dim();
    }
    check(classifier, in, extractor.size());
  }

  template <typename OtherTag>
  [[nodiscard]] bool same_shape(const LayerStack<Scalar, OtherTag>& o) const {
    if (o.extractor.size() != extractor.size()) return false;
    auto eq = [](const DenseLayer<Scalar>& a, const DenseLayer<Scalar>& b) {
      return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() &&
             a.bias.size() == b.bias.size();
    };
    for (std::size_t i = 0; i < extractor.size(); ++i)
      if (!eq(extractor[i], o.extractor[i])) return false;
    return eq(classifier, o.classifier);
  }

  /// Visits every (weight, bias) pair, extractor first.
  template <typename Fn>
  void for_each_layer(Fn&& fn) {
    for (auto& l : extractor) fn(l);
    fn(classifier);
  }
  template <typename Fn>
  void for_each_layer(Fn&& fn) const {
    for (const auto& l : extractor) fn(l);
    fn(classifier);
  }
};

template <typename Scalar>
using ModelParams = LayerStack<Scalar, ParamsTag>;

template <typename Scalar>
using Gradients = LayerStack<Scalar, GradientsTag>;

template <typename Tag, typename Scalar, typename OtherTag>
LayerStack<Scalar, Tag> zeros_like(const LayerStack<Scalar, OtherTag>& ref) {
  LayerStack<Scalar, Tag> out;
  for (const auto& l : ref.extractor)
    out.extractor.push_back({MatX<Scalar>::Zero(l.weight.rows(), l.weight.cols()), VecX<Scalar>::Zero(l.bias.size())});
  out.classifier = {MatX<Scalar>::Zero(ref.classifier.weight.rows(), ref.classifier.weight.cols()),
                    VecX<Scalar>::Zero(ref.classifier.bias.size())};
  return out;
}

/// All parameters concatenated layer by layer (weight column-major, then bias).
template <typename Scalar, typename Tag>
VecX<Scalar> flatten(const LayerStack<Scalar, Tag>& s) {
  VecX<Scalar> out(static_cast<Eigen::Index>(s.parameter_count()));
  Eigen::Index pos = 0;
  s.for_each_layer([&](const DenseLayer<Scalar>& l) {
    out.segment(pos, l.weight.size()) = l.weight.reshaped();
    pos += l.weight.size();
    out.segment(pos, l.bias.size()) = l.bias;
    pos += l.bias.size();
  });
  return out;
}

/// Inverse of flatten against the shapes of `ref`.
template <typename Scalar, typename Tag>
void unflatten(LayerStack<Scalar, Tag>& ref, const VecX<Scalar>& flat) {
  if (flat.size() != static_cast<Eigen::Index>(ref.parameter_count()))
    throw DimensionError("flat parameter vector has wrong length");
  Eigen::Index pos = 0;
  ref.for_each_layer([&](DenseLayer<Scalar>& l) {
    l.weight.reshaped() = flat.segment(pos, l.weight.size());
    pos += l.weight.size();
    l.bias = flat.segment(pos, l.bias.size());
    pos += l.bias.size();
  });
}

/// He-uniform weights, zero biases. `hidden` lists extractor widths before the
/// feature layer, so {128} with feature_dim 64 gives input -> 128 -> 64.
template <typename Scalar = double>
ModelParams<Scalar> init_params(Eigen::Index input_dim, std::span<const Eigen::Index> hidden,
                                Eigen::Index feature_dim, Eigen::Index num_classes, Rng& rng) {
  if (input_dim < 1 || feature_dim < 1 || num_classes < 1)
    throw InvalidArgument("network dimensions must be positive");
  auto make = [&](Eigen::Index in, Eigen::Index out) {
    DenseLayer<Scalar> l{MatX<Scalar>(out, in), VecX<Scalar>::Zero(out)};
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    for (Eigen::Index c = 0; c < in; ++c)
      for (Eigen::Index r = 0; r < out; ++r) l.weight(r, c) = Scalar((2.0 * rng.uniform01() - 1.0) * limit);
    return l;
  };
  ModelParams<Scalar> p;
  Eigen::Index in = input_dim;
  for (auto width : hidden) {
    if (width < 1) throw InvalidArgument("hidden width must be positive");
    p.extractor.push_back(make(in, width));
    in = width;
  }
  p.extractor.push_back(make(in, feature_dim));
  p.classifier = make(feature_dim, num_classes);
  return p;
}

template <typename Scalar>
struct ForwardPass {
  Tensor<Scalar> features;  // B x d_p
  Tensor<Scalar> logits;    // B x |I|
};

namespace detail {

template <typename Scalar>
struct Trace {
  std::vector<Tensor<Scalar>> inputs;  // input to each extractor layer
  std::vector<Tensor<Scalar>> pre;     // pre-activation of each extractor layer
  Tensor<Scalar> features;
  Tensor<Scalar> logits;
};

template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, const DenseLayer<Scalar>& l) {
  Tensor<Scalar> z = x * l.weight.transpose();
  z.rowwise() += l.bias.transpose();
  return z;
}

template <typename Scalar>
Trace<Scalar> run(const ModelParams<Scalar>& params, const Tensor<Scalar>& batch) {
  params.validate();
  if (batch.rows() < 1) throw DimensionError("batch must hold at least one row");
  if (batch.cols() != params.input_dim())
    throw DimensionError(fmt::format("batch has {} columns, network expects {}", batch.cols(), params.input_dim()));
  Trace<Scalar> t;
  Tensor<Scalar> a = batch;
  for (const auto& layer : params.extractor) {
    t.inputs.push_back(a);
    t.pre.push_back(affine(a, layer));
    a = t.pre.back().cwiseMax(Scalar(0));
  }
  t.features = std::move(a);
  t.logits = affine(t.features, params.classifier);
  if (!t.logits.allFinite() || !t.features.allFinite()) throw NumericError("forward pass produced a non-finite value");
  return t;
}

template <typename Scalar>
void check_labels(Eigen::Index rows, Eigen::Index classes, std::span<const ClassId> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != rows)
    throw DimensionError(fmt::format("{} labels for {} rows", labels.size(), rows));
  for (auto y : labels)
    if (static_cast<Eigen::Index>(y) >= classes)
      throw InvalidArgument(fmt::format("label {} outside [0, {})", y, classes));
}

/// Row-wise softmax, max-shifted.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  Tensor<Scalar> p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

}  // namespace detail

/// Features f(r; x) and logits g(z; f(r; x)) for every row of `batch`.
template <typename Scalar>
ForwardPass<Scalar> forward(const ModelParams<Scalar>& params, const Tensor<Scalar>& batch) {
  auto t = detail::run(params, batch);
  return {std::move(t.features), std::move(t.logits)};
}

/// Mean over rows of -log softmax(logits)[label], log-sum-exp stabilised.
template <typename Scalar>
Scalar cross_entropy(const Tensor<Scalar>& logits, std::span<const ClassId> labels) {
  detail::check_labels<Scalar>(logits.rows(), logits.cols(), labels);
  if (logits.rows() < 1) throw DimensionError("cross_entropy needs at least one row");
  Scalar total(0);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    const Scalar lse = m + std::log((logits.row(r).array() - m).exp().sum());
    total += lse - logits(r, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(r)]));
  }
  const Scalar loss = total / Scalar(logits.rows());
  if (!std::isfinite(static_cast<double>(loss))) throw NumericError("cross entropy is not finite");
  return loss;
}

/// Class means of `features` over the rows carrying each label.
template <typename Scalar>
std::map<ClassId, VecX<Scalar>> class_means(const Tensor<Scalar>& features, std::span<const ClassId> labels,
                                            std::map<ClassId, std::size_t>* counts = nullptr) {
  std::map<ClassId, std::pair<VecX<Scalar>, std::size_t>> acc;
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    auto [it, fresh] = acc.try_emplace(labels[static_cast<std::size_t>(r)], VecX<Scalar>::Zero(features.cols()), 0);
    it->second.first += features.row(r).transpose();
    ++it->second.second;
  }
  std::map<ClassId, VecX<Scalar>> out;
  for (auto& [cls, a] : acc) {
    out.emplace(cls, a.first / Scalar(a.second));
    if (counts != nullptr) (*counts)[cls] = a.second;
  }
  return out;
}

template <typename Scalar>
struct BackwardResult {
  Gradients<Scalar> grads;
  Scalar loss_s{};
  Scalar loss_r{};
  /// Per-class feature means of this batch, the local prototypes the
  /// alignment term is evaluated at.
  PrototypeSet batch_prototypes;
};

/// Gradient of L = L_S + lambda * L_R with respect to every parameter.
///
/// L_S is the mean cross entropy of the batch. L_R is
/// (1/|I|) * sum_i ||p_i - P_i||_2 over classes i present both in the batch
/// and in `global`, where p_i is the mean feature of the batch rows of class i,
/// so the alignment gradient flows back through those rows only. At
/// ||p_i - P_i|| = 0 the subgradient 0 is used. With an empty `global` or
/// lambda == 0 the alignment path is skipped entirely.
template <typename Scalar>
BackwardResult<Scalar> backward(const ModelParams<Scalar>& params, const Tensor<Scalar>& batch,
                                std::span<const ClassId> labels, const PrototypeSet& global, Scalar lambda) {
  if (!(lambda >= Scalar(0))) throw InvalidArgument("lambda must be non-negative");
  auto t = detail::run(params, batch);
  const Eigen::Index classes = params.num_classes();
  detail::check_labels<Scalar>(batch.rows(), classes, labels);
  if (!global.empty() && global.dim() != params.feature_dim())
    throw DimensionError(fmt::format("global prototypes have dimension {}, features have {}", global.dim(),
                                     params.feature_dim()));

  const auto rows = batch.rows();
  BackwardResult<Scalar> out;
  out.grads = zeros_like<GradientsTag>(params);

  // Cross entropy: d/dlogits = (softmax - onehot) / B.
  Tensor<Scalar> dlogits = detail::softmax(t.logits);
  for (Eigen::Index r = 0; r < rows; ++r) dlogits(r, labels[static_cast<std::size_t>(r)]) -= Scalar(1);
  dlogits /= Scalar(rows);
  out.loss_s = cross_entropy(t.logits, labels);

  out.grads.classifier.weight = dlogits.transpose() * t.features;
  out.grads.classifier.bias = dlogits.colwise().sum().transpose();
  Tensor<Scalar> dfeat = dlogits * params.classifier.weight;

  // Prototype alignment.
  std::map<ClassId, std::size_t> counts;
  const auto means = class_means(t.features, labels, &counts);
  out.batch_prototypes = PrototypeSet(kGlobalOwner, global.round());
  for (const auto& [cls, m] : means) out.batch_prototypes.set(cls, m.template cast<double>());

  Scalar loss_r(0);
  std::map<ClassId, VecX<Scalar>> dproto;
  for (const auto& [cls, m] : means) {
    const auto* target = global.find(cls);
    if (target == nullptr) continue;
    const VecX<Scalar> diff = m - target->template cast<Scalar>();
    const Scalar n = diff.norm();
    loss_r += n;
    if (n > Scalar(0)) dproto.emplace(cls, diff / (Scalar(classes) * n));
  }
  out.loss_r = loss_r / Scalar(classes);

  if (lambda != Scalar(0) && !global.empty()) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      const ClassId cls = labels[static_cast<std::size_t>(r)];
      auto it = dproto.find(cls);
      if (it == dproto.end()) continue;
      dfeat.row(r) += (lambda / Scalar(counts[cls])) * it->second.transpose();
    }
  }

  // Back through the extractor.
  Tensor<Scalar> da = std::move(dfeat);
  for (std::size_t i = params.extractor.size(); i-- > 0;) {
    Tensor<Scalar> dz = (t.pre[i].array() > Scalar(0)).select(da, Scalar(0));
    out.grads.extractor[i].weight = dz.transpose() * t.inputs[i];
    out.grads.extractor[i].bias = dz.colwise().sum().transpose();
    if (i > 0) da = dz * params.extractor[i].weight;
  }

  bool finite = true;
  out.grads.for_each_layer([&](const DenseLayer<Scalar>& l) { finite = finite && l.weight.allFinite() && l.bias.allFinite(); });
  if (!finite) throw NumericError("backward pass produced a non-finite gradient");
  return out;
}

/// Cross-entropy-only gradient.
template <typename Scalar>
BackwardResult<Scalar> classification_backward(const ModelParams<Scalar>& params, const Tensor<Scalar>& batch,
                                               std::span<const ClassId> labels) {
  return backward(params, batch, labels, PrototypeSet{}, Scalar(0));
}

/// Plain SGD: w <- w - eta * g.
template <typename Scalar>
ModelParams<Scalar> sgd_step(const ModelParams<Scalar>& params, const Gradients<Scalar>& grads, Scalar eta) {
  if (!(eta > Scalar(0))) throw InvalidArgument("learning rate must be positive");
  if (!params.same_shape(grads)) throw DimensionError("gradients do not match parameter shapes");
  ModelParams<Scalar> out = params;
  for (std::size_t i = 0; i < out.extractor.size(); ++i) {
    out.extractor[i].weight -= eta * grads.extractor[i].weight;
    out.extractor[i].bias -= eta * grads.extractor[i].bias;
  }
  out.classifier.weight -= eta * grads.classifier.weight;
  out.classifier.bias -= eta * grads.classifier.bias;
  return out;
}

template <typename Scalar>
Scalar squared_norm(const Gradients<Scalar>& g) {
  Scalar s(0);
  g.for_each_layer([&](const DenseLayer<Scalar>& l) { s += l.weight.squaredNorm() + l.bias.squaredNorm(); });
  return s;
}

}  // namespace dfpl
