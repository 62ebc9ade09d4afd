#include "asxai/proto_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "asxai/errors.hpp"

namespace asxai {

FeatureMap::FeatureMap(Tensor v) : values(std::move(v)) {
  if (values.rank() != 4) throw DimensionError("FeatureMap: expected rank-4 tensor");
  if (values.dim(1) == 0 || values.dim(2) == 0 || values.dim(3) == 0) {
    throw DimensionError("FeatureMap: D, H and W must be positive");
  }
  if (!values.all_finite()) throw ValidationError("FeatureMap: non-finite activation");
}

Eigen::MatrixXd FeatureMap::patches(std::size_t b) const {
  const std::size_t d = channels(), hw = height() * width();
  Eigen::MatrixXd p(static_cast<long>(hw), static_cast<long>(d));
  const double* base = values.data() + b * d * hw;
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t s = 0; s < hw; ++s) p(static_cast<long>(s), static_cast<long>(c)) = base[c * hw + s];
  }
  return p;
}

std::vector<double> FeatureMap::patch(std::size_t b, std::size_t h, std::size_t w) const {
  std::vector<double> p(channels());
  for (std::size_t c = 0; c < channels(); ++c) p[c] = values(b, c, h, w);
  return p;
}

BasisBank::BasisBank(Tensor v, std::vector<std::string> labels)
    : vectors(std::move(v)), class_labels(std::move(labels)) {
  if (vectors.rank() != 3) throw DimensionError("BasisBank: expected [C, M, D]");
  if (class_labels.size() != vectors.dim(0)) {
    throw ValidationError("BasisBank: " + std::to_string(class_labels.size()) + " labels for " +
                          std::to_string(vectors.dim(0)) + " classes");
  }
}

std::span<double> BasisBank::vector(std::size_t c, std::size_t m) {
  return {vectors.data() + (c * per_class() + m) * dim(), dim()};
}

std::span<const double> BasisBank::vector(std::size_t c, std::size_t m) const {
  return {vectors.data() + (c * per_class() + m) * dim(), dim()};
}

Eigen::MatrixXd BasisBank::class_matrix(std::size_t c) const {
  Eigen::MatrixXd a(static_cast<long>(per_class()), static_cast<long>(dim()));
  for (std::size_t m = 0; m < per_class(); ++m) {
    auto v = vector(c, m);
    for (std::size_t d = 0; d < dim(); ++d) a(static_cast<long>(m), static_cast<long>(d)) = v[d];
  }
  return a;
}

Eigen::MatrixXd BasisBank::all_vectors() const {
  Eigen::MatrixXd a(static_cast<long>(total()), static_cast<long>(dim()));
  for (std::size_t j = 0; j < total(); ++j) {
    for (std::size_t d = 0; d < dim(); ++d) {
      a(static_cast<long>(j), static_cast<long>(d)) = vectors[j * dim() + d];
    }
  }
  return a;
}

void BasisBank::validate() const {
  if (!vectors.all_finite()) throw ValidationError("BasisBank: non-finite entry");
  for (std::size_t c = 0; c < classes(); ++c) {
    for (std::size_t m = 0; m < per_class(); ++m) {
      auto v = vector(c, m);
      if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
        throw ValidationError("BasisBank: zero basis vector at class " + std::to_string(c) +
                              ", index " + std::to_string(m));
      }
    }
  }
}

BasisBank BasisBank::random_uniform(std::size_t classes, std::size_t per_class, std::size_t dim,
                                    std::vector<std::string> labels, Rng& rng) {
  Tensor v({classes, per_class, dim});
  for (double& x : v.values()) x = rng.uniform();
  return BasisBank(std::move(v), std::move(labels));
}

void ClassifierHead::clamp() {
  for (double& w : weights.values()) w = std::clamp(w, kMinWeight, kMaxWeight);
}

bool ClassifierHead::within_range() const {
  return std::all_of(weights.values().begin(), weights.values().end(),
                     [](double w) { return w >= kMinWeight && w <= kMaxWeight; });
}

ClassifierHead init_classifier(std::size_t classes, std::size_t per_class) {
  if (classes < 2) throw ValidationError("init_classifier: need at least two classes");
  if (per_class < 1) throw ValidationError("init_classifier: need at least one basis vector per class");
  ClassifierHead head{Tensor({classes, classes * per_class}, ClassifierHead::kMinWeight)};
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t m = 0; m < per_class; ++m) head.weights(c, c * per_class + m) = 1.0;
  }
  return head;
}

ProtoModel::ProtoModel(ModelConfig cfg) : config(std::move(cfg)) {
  if (config.class_labels.size() < 2) throw ValidationError("ProtoModel: need at least two classes");
  if (config.backbone_channels.empty()) throw ValidationError("ProtoModel: empty backbone");
  if (config.feature_dim == 0 || config.per_class == 0) {
    throw ValidationError("ProtoModel: feature_dim and per_class must be positive");
  }
  Rng rng(derive_seed(config.seed, {0x6d6f64656cULL}));
  std::size_t in = 3;
  for (std::size_t out : config.backbone_channels) {
    nn::Conv2d conv(in, out, 3, 2, 1);
    conv.init_he(rng);
    backbone.push_back(std::move(conv));
    in = out;
  }
  addon1 = nn::Conv2d(in, config.feature_dim, 1, 1, 0);
  addon1.init_he(rng);
  addon2 = nn::Conv2d(config.feature_dim, config.feature_dim, 1, 1, 0);
  addon2.init_he(rng);
  bank = BasisBank::random_uniform(config.class_labels.size(), config.per_class, config.feature_dim,
                                   config.class_labels, rng);
  head = init_classifier(config.class_labels.size(), config.per_class);
}

std::size_t ProtoModel::backbone_out_channels() const { return backbone.back().out_channels(); }

Tensor ProtoModel::backbone_forward(const Tensor& images, std::vector<Tensor>* trace) const {
  Tensor x = images;
  if (trace) {
    trace->clear();
    trace->push_back(x);
  }
  for (const auto& conv : backbone) {
    x = nn::relu(conv.forward(x));
    if (trace) trace->push_back(x);
  }
  return x;
}

Tensor ProtoModel::addon_forward(const Tensor& backbone_out, Tensor* hidden) const {
  Tensor h = nn::relu(addon1.forward(backbone_out));
  Tensor f = nn::sigmoid(addon2.forward(h));
  if (hidden) *hidden = std::move(h);
  return f;
}

Tensor ProtoModel::addon_backward(const Tensor& backbone_out, const Tensor& hidden,
                                  const Tensor& features, const Tensor& grad_features,
                                  AddOnGrads* grads, bool need_input_grad) const {
  Tensor g2 = nn::sigmoid_backward(features, grad_features);
  Tensor gh = addon2.backward(hidden, g2, grads ? &grads->w2 : nullptr, grads ? &grads->b2 : nullptr);
  Tensor g1 = nn::relu_backward(hidden, gh);
  return addon1.backward(backbone_out, g1, grads ? &grads->w1 : nullptr, grads ? &grads->b1 : nullptr,
                         need_input_grad);
}

Tensor ProtoModel::backbone_backward(const std::vector<Tensor>& trace, const Tensor& grad_out,
                                     std::vector<Tensor>* grads, bool need_input_grad) const {
  if (trace.size() != backbone.size() + 1) throw ValidationError("backbone_backward: bad trace");
  Tensor g = grad_out;
  for (std::size_t i = backbone.size(); i-- > 0;) {
    g = nn::relu_backward(trace[i + 1], g);
    const bool need = need_input_grad || i > 0;
    g = backbone[i].backward(trace[i], g, grads ? &(*grads)[2 * i] : nullptr,
                             grads ? &(*grads)[2 * i + 1] : nullptr, need);
    if (!need) break;
  }
  return g;
}

ForwardTrace ProtoModel::trace(const Tensor& images) const {
  ForwardTrace t;
  Tensor out = backbone_forward(images, &t.backbone);
  t.features = addon_forward(out, &t.hidden);
  return t;
}

std::uint64_t ProtoModel::backbone_checksum() const {
  std::uint64_t h = 0;
  for (const auto& conv : backbone) h = h * 31 + checksum(conv.weight) + 7 * checksum(conv.bias);
  return h;
}

std::uint64_t ProtoModel::addon_checksum() const {
  return checksum(addon1.weight) ^ (checksum(addon1.bias) * 3) ^ (checksum(addon2.weight) * 5) ^
         (checksum(addon2.bias) * 7);
}

std::uint64_t ProtoModel::bank_checksum() const { return checksum(bank.vectors); }
std::uint64_t ProtoModel::head_checksum() const { return checksum(head.weights); }

FeatureMap extract_features(const Tensor& images, const ProtoModel& model) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != kInputSize ||
      images.dim(3) != kInputSize) {
    throw DimensionError("extract_features: expected [batch, 3, 224, 224], got " +
                         shape_string(images.shape()));
  }
  if (!images.all_finite()) throw ValidationError("extract_features: non-finite input");
  return FeatureMap(model.addon_forward(model.backbone_forward(images)));
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

Tensor cosine_similarity_maps(const FeatureMap& fmap, const BasisBank& bank) {
  if (fmap.channels() != bank.dim()) {
    throw DimensionError("cosine_similarity_maps: feature dim " + std::to_string(fmap.channels()) +
                         " != basis dim " + std::to_string(bank.dim()));
  }
  const std::size_t hw = fmap.height() * fmap.width();
  const std::size_t total = bank.total();
  Eigen::MatrixXd a = bank.all_vectors();
  Eigen::VectorXd an = a.rowwise().norm();
  for (long j = 0; j < a.rows(); ++j) {
    if (an(j) > 0.0) a.row(j) /= an(j);
  }
  Tensor out({fmap.batch(), total, fmap.height(), fmap.width()});
  for (std::size_t b = 0; b < fmap.batch(); ++b) {
    Eigen::MatrixXd p = fmap.patches(b);
    Eigen::VectorXd pn = p.rowwise().norm();
    for (long s = 0; s < p.rows(); ++s) {
      if (pn(s) > 0.0) p.row(s) /= pn(s);
    }
    const Eigen::MatrixXd cos = a * p.transpose();  // [total, hw]
    double* dst = out.data() + b * total * hw;
    for (std::size_t j = 0; j < total; ++j) {
      for (std::size_t s = 0; s < hw; ++s) {
        dst[j * hw + s] = std::clamp(cos(static_cast<long>(j), static_cast<long>(s)), -1.0, 1.0);
      }
    }
  }
  return out;
}

Tensor global_max_pool(const Tensor& simmaps) {
  if (simmaps.rank() != 4) throw DimensionError("global_max_pool: expected rank-4 input");
  const std::size_t hw = simmaps.dim(2) * simmaps.dim(3);
  if (hw == 0) throw DimensionError("global_max_pool: empty spatial dims");
  Tensor out({simmaps.dim(0), simmaps.dim(1)});
  for (std::size_t b = 0; b < simmaps.dim(0); ++b) {
    for (std::size_t j = 0; j < simmaps.dim(1); ++j) {
      const double* m = simmaps.data() + (b * simmaps.dim(1) + j) * hw;
      out(b, j) = *std::max_element(m, m + hw);
    }
  }
  return out;
}

Tensor class_logits(const Tensor& scores, const ClassifierHead& head) {
  if (scores.rank() != 2 || scores.dim(1) != head.inputs()) {
    throw DimensionError("class_logits: scores " + shape_string(scores.shape()) + " vs head " +
                         shape_string(head.weights.shape()));
  }
  Tensor logits({scores.dim(0), head.classes()});
  for (std::size_t b = 0; b < scores.dim(0); ++b) {
    for (std::size_t c = 0; c < head.classes(); ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < head.inputs(); ++j) s += head.weights(c, j) * scores(b, j);
      logits(b, c) = s;
    }
  }
  return logits;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor p = logits;
  const std::size_t cols = logits.dim(1);
  for (std::size_t b = 0; b < logits.dim(0); ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, logits(b, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      p(b, c) = std::exp(logits(b, c) - mx);
      z += p(b, c);
    }
    for (std::size_t c = 0; c < cols; ++c) p(b, c) /= z;
  }
  return p;
}

Tensor classify(const Tensor& scores, const ClassifierHead& head) {
  return softmax_rows(class_logits(scores, head));
}

}  // namespace asxai
