#include "asxai/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "asxai/errors.hpp"
#include "asxai/log.hpp"
#include "json.hpp"

namespace asxai {

namespace {

constexpr std::uint64_t kWarmupTag = 1;
constexpr std::uint64_t kJointTag = 2;

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  std::vector<std::size_t> shape = t.shape();
  const std::size_t stride = t.size() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(t.data() + rows[i] * stride, stride, out.data() + i * stride);
  }
  return out;
}

void add_scaled(Tensor& dst, const Tensor& src, double scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

bool finite_terms(const LossTerms& t) {
  return std::isfinite(t.ce) && std::isfinite(t.orthogonality) && std::isfinite(t.subspace_separation) &&
         std::isfinite(t.separation) && std::isfinite(t.aggregation);
}

std::string describe(const LossTerms& t) {
  std::ostringstream os;
  os << "ce=" << t.ce << " l_orth=" << t.orthogonality << " l_ss=" << t.subspace_separation
     << " l_sep=" << t.separation << " l_agg=" << t.aggregation;
  return os.str();
}

void gradient_stage(ProtoModel& model, const TrainingSet& data, const TrainConfig& cfg, TrainingLog& log,
                    const std::string& name, std::uint64_t tag, std::size_t epochs, std::size_t cycle,
                    bool train_backbone) {
  cfg.validate();
  data.validate(model.classes());
  const std::size_t n = data.size();
  const LossWeights& w = cfg.loss_weights;

  Tensor cached;
  if (!train_backbone) {
    std::vector<Tensor> parts;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      Tensor chunk = data.images.slice(start, std::min(n, start + cfg.batch_size));
      parts.push_back(model.backbone_forward(chunk));
    }
    cached = concat(parts);
  }

  nn::Adam adam(cfg.learning_rate);
  std::vector<std::size_t> order(n);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, {tag, cycle, e}));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    LossTerms sum;
    double total_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0, batch = 0; start < n; start += cfg.batch_size, ++batch) {
      std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, n - start));
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(data.labels[i]);

      std::vector<Tensor> trace;
      Tensor bout = train_backbone ? model.backbone_forward(gather_rows(data.images, idx), &trace)
                                   : gather_rows(cached, idx);
      Tensor hidden;
      Tensor features = model.addon_forward(bout, &hidden);
      if (!features.all_finite() || !model.bank.vectors.all_finite()) {
        throw DivergenceError(name + " stage diverged at cycle " + std::to_string(cycle) + " epoch " +
                              std::to_string(e + 1) + " batch " + std::to_string(batch) +
                              ": non-finite features or basis vectors");
      }
      const FeatureMap fm(features);
      const BasisBank perturbed =
          perturb_basis(model.bank, cfg.perturbation, derive_seed(cfg.seed, {tag, cycle, e, batch, 0x70}));

      ClassificationGradient cg = classification_loss_grad(fm, labels, model.bank, model.head);
      PatchLossGradient ag = aggregation_loss_grad(fm, labels, perturbed);
      PatchLossGradient sg = separation_loss_grad(fm, labels, perturbed);
      LossTerms terms{cg.ce, orthogonality_loss(model.bank), subspace_separation_loss(model.bank), sg.value,
                      ag.value};
      const double total = total_loss(terms, w);
      if (!finite_terms(terms) || !std::isfinite(total)) {
        throw DivergenceError(name + " stage diverged at cycle " + std::to_string(cycle) + " epoch " +
                              std::to_string(e + 1) + " batch " + std::to_string(batch) + ": " +
                              describe(terms));
      }

      Tensor grad_features = cg.grad_features;
      add_scaled(grad_features, sg.grad_features, w.separation);
      add_scaled(grad_features, ag.grad_features, w.aggregation);
      Tensor grad_bank = cg.grad_bank;
      add_scaled(grad_bank, orthogonality_loss_grad(model.bank), w.orthogonality);
      add_scaled(grad_bank, subspace_separation_loss_grad(model.bank), w.subspace_separation);
      add_scaled(grad_bank, sg.grad_bank, w.separation);
      add_scaled(grad_bank, ag.grad_bank, w.aggregation);

      AddOnGrads g{Tensor(model.addon1.weight.shape()), Tensor(model.addon1.bias.shape()),
                   Tensor(model.addon2.weight.shape()), Tensor(model.addon2.bias.shape())};
      Tensor grad_bout = model.addon_backward(bout, hidden, features, grad_features, &g, train_backbone);
      if (train_backbone) {
        std::vector<Tensor> bg;
        for (const auto& conv : model.backbone) {
          bg.emplace_back(conv.weight.shape());
          bg.emplace_back(conv.bias.shape());
        }
        model.backbone_backward(trace, grad_bout, &bg, false);
        for (std::size_t i = 0; i < model.backbone.size(); ++i) {
          adam.step(5 + 2 * i, model.backbone[i].weight.values(), bg[2 * i].values());
          adam.step(6 + 2 * i, model.backbone[i].bias.values(), bg[2 * i + 1].values());
        }
      }
      adam.step(0, model.addon1.weight.values(), g.w1.values());
      adam.step(1, model.addon1.bias.values(), g.b1.values());
      adam.step(2, model.addon2.weight.values(), g.w2.values());
      adam.step(3, model.addon2.bias.values(), g.b2.values());
      adam.step(4, model.bank.vectors.values(), grad_bank.values());

      const double share = static_cast<double>(idx.size());
      sum.ce += share * terms.ce;
      sum.orthogonality += share * terms.orthogonality;
      sum.subspace_separation += share * terms.subspace_separation;
      sum.separation += share * terms.separation;
      sum.aggregation += share * terms.aggregation;
      total_sum += share * total;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cg.probs.dim(1); ++c) {
          if (cg.probs(i, c) > cg.probs(i, best)) best = c;
        }
        if (static_cast<int>(best) == labels[i]) ++correct;
      }
    }
    const double inv = 1.0 / static_cast<double>(n);
    EpochRecord rec{name, cycle, e + 1,
                    LossTerms{sum.ce * inv, sum.orthogonality * inv, sum.subspace_separation * inv,
                              sum.separation * inv, sum.aggregation * inv},
                    total_sum * inv, static_cast<double>(correct) * inv};
    log_info(name + " cycle " + std::to_string(cycle) + " epoch " + std::to_string(e + 1) +
             ": total=" + std::to_string(rec.total) + " acc=" + std::to_string(rec.accuracy));
    log.records.push_back(rec);
  }
}

}  // namespace

void TrainingSet::validate(std::size_t classes) const {
  if (labels.empty()) throw ValidationError("training set is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw DimensionError("training set: images " + shape_string(images.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (!ids.empty() && ids.size() != labels.size()) throw ValidationError("training set: id count mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ValidationError("training set: label " + std::to_string(y) + " out of range");
    }
  }
}

void TrainConfig::validate() const {
  if (warmup_epochs < 1 || joint_epochs < 1) throw ValidationError("epoch counts must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (max_cycles < 1) throw ValidationError("max_cycles must be >= 1");
  if (!(perturbation.sigma >= 0.0)) throw ValidationError("perturbation sigma must be >= 0");
}

std::vector<EpochRecord> TrainingLog::stage(const std::string& name) const {
  std::vector<EpochRecord> out;
  for (const auto& r : records) {
    if (r.stage == name) out.push_back(r);
  }
  return out;
}

std::string TrainingLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["stage"] = r.stage;
    j["cycle"] = r.cycle;
    j["epoch"] = r.epoch;
    j["ce"] = r.terms.ce;
    j["l_orth"] = r.terms.orthogonality;
    j["l_ss"] = r.terms.subspace_separation;
    j["l_sep"] = r.terms.separation;
    j["l_agg"] = r.terms.aggregation;
    j["total"] = r.total;
    j["accuracy"] = r.accuracy;
    out += j.dump();
    out += '\n';
  }
  return out;
}

FeatureMap dataset_features(const ProtoModel& model, const TrainingSet& data, std::size_t chunk) {
  if (data.size() == 0) throw ValidationError("dataset_features: empty dataset");
  std::vector<Tensor> parts;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    parts.push_back(extract_features(data.images.slice(start, std::min(data.size(), start + chunk)), model).values);
  }
  return FeatureMap(concat(parts));
}

LossTerms evaluate_losses(const ProtoModel& model, const FeatureMap& features, const std::vector<int>& labels) {
  Tensor probs = classify(global_max_pool(cosine_similarity_maps(features, model.bank)), model.head);
  return LossTerms{cross_entropy_loss(probs, one_hot(labels, model.classes())), orthogonality_loss(model.bank),
                   subspace_separation_loss(model.bank), separation_loss(features, labels, model.bank),
                   aggregation_loss(features, labels, model.bank)};
}

double accuracy(const Tensor& probs, const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.dim(1); ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

void warmup_stage(ProtoModel& model, const TrainingSet& data, const TrainConfig& cfg, TrainingLog& log,
                  std::size_t cycle) {
  gradient_stage(model, data, cfg, log, "warmup", kWarmupTag, cfg.warmup_epochs, cycle, false);
}

void joint_stage(ProtoModel& model, const TrainingSet& data, const TrainConfig& cfg, TrainingLog& log,
                 std::size_t cycle) {
  gradient_stage(model, data, cfg, log, "joint", kJointTag, cfg.joint_epochs, cycle, cfg.train_backbone);
}

std::vector<PatchSource> project_basis_vectors(ProtoModel& model, const TrainingSet& data) {
  data.validate(model.classes());
  return project_basis_vectors(model, dataset_features(model, data), data);
}

std::vector<PatchSource> project_basis_vectors(ProtoModel& model, const FeatureMap& features,
                                               const TrainingSet& data) {
  data.validate(model.classes());
  if (features.batch() != data.size() || features.channels() != model.bank.dim()) {
    throw DimensionError("project_basis_vectors: features do not match dataset/bank");
  }
  const std::size_t classes = model.classes();
  const std::size_t per_class = model.bank.per_class();
  const std::size_t width = features.width();
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < data.size(); ++i) members[static_cast<std::size_t>(data.labels[i])].push_back(i);
  for (std::size_t c = 0; c < classes; ++c) {
    if (members[c].empty()) {
      throw ValidationError("project_basis_vectors: class '" + model.bank.class_labels[c] + "' has no images");
    }
  }

  std::vector<Eigen::MatrixXd> unit(data.size());
  std::vector<Eigen::VectorXd> norms(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    unit[i] = features.patches(i);
    norms[i] = unit[i].rowwise().norm();
    for (long r = 0; r < unit[i].rows(); ++r) {
      if (norms[i](r) > 0.0) unit[i].row(r) /= norms[i](r);
    }
  }

  std::vector<PatchSource> sources(classes * per_class);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t m = 0; m < per_class; ++m) {
      auto a = model.bank.vector(c, m);
      Eigen::Map<const Eigen::VectorXd> av(a.data(), static_cast<long>(a.size()));
      const double an = av.norm();
      const Eigen::VectorXd au = an > 0.0 ? Eigen::VectorXd(av / an) : Eigen::VectorXd(av);
      double best = -std::numeric_limits<double>::infinity();
      PatchSource src;
      for (std::size_t i : members[c]) {
        const Eigen::VectorXd cs = unit[i] * au;
        for (long r = 0; r < cs.size(); ++r) {
          const double v = (an > 0.0 && norms[i](r) > 0.0) ? cs(r) : 0.0;
          if (v > best) {
            best = v;
            src.image = i;
            src.row = static_cast<std::size_t>(r) / width;
            src.col = static_cast<std::size_t>(r) % width;
          }
        }
      }
      src.image_id = data.ids.empty() ? std::to_string(src.image) : data.ids[src.image];
      for (std::size_t d = 0; d < a.size(); ++d) a[d] = features.values(src.image, d, src.row, src.col);
      sources[c * per_class + m] = src;
    }
  }
  return sources;
}

void fc_convex_stage(ProtoModel& model, const TrainingSet& data, const TrainConfig& cfg, TrainingLog& log,
                     std::size_t cycle) {
  data.validate(model.classes());
  const FeatureMap features = dataset_features(model, data);
  const Tensor scores = global_max_pool(cosine_similarity_maps(features, model.bank));
  const Tensor targets = one_hot(data.labels, model.classes());
  LossTerms fixed = evaluate_losses(model, features, data.labels);

  const std::size_t n = scores.dim(0), k = scores.dim(1), classes = model.classes();
  double max_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += scores(i, j) * scores(i, j);
    max_sq = std::max(max_sq, s);
  }
  model.head.clamp();
  if (max_sq == 0.0) return;
  const double step = 2.0 / max_sq;
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t it = 0; it < cfg.fc_iterations; ++it) {
    Tensor probs = classify(scores, model.head);
    Tensor grad(model.head.weights.shape());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < classes; ++c) {
        const double g = (probs(i, c) - targets(i, c)) * inv_n;
        for (std::size_t j = 0; j < k; ++j) grad(c, j) += g * scores(i, j);
      }
    }
    add_scaled(model.head.weights, grad, -step);
    model.head.clamp();

    probs = classify(scores, model.head);
    fixed.ce = cross_entropy_loss(probs, targets);
    log.records.push_back(
        EpochRecord{"fc", cycle, it + 1, fixed, total_loss(fixed, cfg.loss_weights), accuracy(probs, data.labels)});
  }
}

TrainResult train(ProtoModel& model, const TrainingSet& data, const TrainConfig& cfg, const CycleCallback& on_cycle) {
  cfg.validate();
  data.validate(model.classes());
  TrainResult result;
  warmup_stage(model, data, cfg, result.log, 0);
  double previous = total_loss(evaluate_losses(model, dataset_features(model, data), data.labels), cfg.loss_weights);
  for (std::size_t cycle = 1; cycle <= cfg.max_cycles; ++cycle) {
    joint_stage(model, data, cfg, result.log, cycle);
    result.provenance = project_basis_vectors(model, data);
    fc_convex_stage(model, data, cfg, result.log, cycle);
    result.cycles = cycle;
    if (on_cycle) on_cycle(model, result);
    const double current =
        total_loss(evaluate_losses(model, dataset_features(model, data), data.labels), cfg.loss_weights);
    const double improvement = (previous - current) / std::max(std::abs(previous), 1e-12);
    log_info("cycle " + std::to_string(cycle) + ": total " + std::to_string(current) + ", relative improvement " +
             std::to_string(improvement));
    if (improvement < cfg.tolerance) break;
    previous = current;
  }
  return result;
}

}  // namespace asxai
