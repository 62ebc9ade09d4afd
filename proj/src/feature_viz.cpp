#include "asxai/feature_viz.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "asxai/errors.hpp"
#include "asxai/log.hpp"
#include "json.hpp"

namespace asxai {

TvTarget parse_tv_target(const std::string& name) {
  if (name == "image") return TvTarget::image;
  if (name == "features") return TvTarget::features;
  throw ValidationError("unknown tv target '" + name + "' (expected image or features)");
}

void InversionConfig::validate() const {
  if (!(beta > 0.0)) throw ValidationError("inversion beta must be > 0");
  if (iterations < 1) throw ValidationError("inversion iterations must be >= 1");
  if (!(lambda_tv >= 0.0)) throw ValidationError("inversion lambda_tv must be >= 0");
  if (log_every < 1) throw ValidationError("inversion log_every must be >= 1");
}

double tv_norm(const Tensor& chw) {
  if (chw.rank() != 3) throw DimensionError("tv_norm: expected [C, H, W], got " + shape_string(chw.shape()));
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  double sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = x + 1 < w ? chw(k, y, x + 1) - chw(k, y, x) : 0.0;
        const double dy = y + 1 < h ? chw(k, y + 1, x) - chw(k, y, x) : 0.0;
        sum += std::sqrt(dx * dx + dy * dy);
      }
    }
  }
  return sum / static_cast<double>(c * h * w);
}

Tensor tv_norm_grad(const Tensor& chw) {
  if (chw.rank() != 3) throw DimensionError("tv_norm_grad: expected [C, H, W]");
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  const double scale = 1.0 / static_cast<double>(c * h * w);
  Tensor g(chw.shape());
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = x + 1 < w ? chw(k, y, x + 1) - chw(k, y, x) : 0.0;
        const double dy = y + 1 < h ? chw(k, y + 1, x) - chw(k, y, x) : 0.0;
        const double mag = std::sqrt(dx * dx + dy * dy);
        if (mag == 0.0) continue;
        const double gx = scale * dx / mag, gy = scale * dy / mag;
        if (x + 1 < w) {
          g(k, y, x + 1) += gx;
          g(k, y, x) -= gx;
        }
        if (y + 1 < h) {
          g(k, y + 1, x) += gy;
          g(k, y, x) -= gy;
        }
      }
    }
  }
  return g;
}

ModelLayerMap::ModelLayerMap(const ProtoModel& model, RankLayer layer, std::vector<std::size_t> filters)
    : model_(model), layer_(layer), filters_(std::move(filters)) {
  const std::size_t total = layer == RankLayer::addon ? model.bank.dim() : model.backbone_out_channels();
  for (std::size_t f : filters_) {
    if (f >= total) throw ValidationError("ModelLayerMap: filter " + std::to_string(f) + " out of range");
  }
}

std::size_t ModelLayerMap::output_channels() const {
  if (!filters_.empty()) return filters_.size();
  return layer_ == RankLayer::addon ? model_.bank.dim() : model_.backbone_out_channels();
}

Tensor ModelLayerMap::select(const Tensor& maps) const {
  const std::size_t hw = maps.dim(2) * maps.dim(3);
  if (filters_.empty()) return maps.reshaped({maps.dim(1), maps.dim(2), maps.dim(3)});
  Tensor out({filters_.size(), maps.dim(2), maps.dim(3)});
  for (std::size_t i = 0; i < filters_.size(); ++i) {
    std::copy_n(maps.data() + filters_[i] * hw, hw, out.data() + i * hw);
  }
  return out;
}

Tensor ModelLayerMap::forward(const Tensor& z) const {
  const Tensor x = z.reshaped({1, 3, kInputSize, kInputSize});
  Tensor out = model_.backbone_forward(x);
  if (layer_ == RankLayer::addon) out = model_.addon_forward(out);
  return select(out);
}

Tensor ModelLayerMap::backward(const Tensor& z, const Tensor& grad_out) const {
  const Tensor x = z.reshaped({1, 3, kInputSize, kInputSize});
  std::vector<Tensor> trace;
  const Tensor bout = model_.backbone_forward(x, &trace);
  const std::size_t channels = layer_ == RankLayer::addon ? model_.bank.dim() : bout.dim(1);
  const std::size_t hw = bout.dim(2) * bout.dim(3);
  Tensor full({1, channels, bout.dim(2), bout.dim(3)});
  if (filters_.empty()) {
    std::copy_n(grad_out.data(), full.size(), full.data());
  } else {
    for (std::size_t i = 0; i < filters_.size(); ++i) {
      std::copy_n(grad_out.data() + i * hw, hw, full.data() + filters_[i] * hw);
    }
  }
  Tensor g = full;
  if (layer_ == RankLayer::addon) {
    Tensor hidden;
    const Tensor features = model_.addon_forward(bout, &hidden);
    g = model_.addon_backward(bout, hidden, features, full, nullptr, true);
  }
  return model_.backbone_backward(trace, g, nullptr, true).reshaped({3, kInputSize, kInputSize});
}

std::string InversionResult::log_jsonl() const {
  std::string out;
  for (const auto& [it, value] : objective_log) {
    nlohmann::ordered_json j;
    j["iteration"] = it;
    j["objective"] = value;
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

double objective_and_grad(const DifferentiableMap& phi, const Tensor& z, const Tensor& target,
                          const InversionConfig& cfg, Tensor* grad) {
  const Tensor out = phi.forward(z);
  if (out.size() != target.size()) {
    throw DimensionError("inversion: target " + shape_string(target.shape()) + " vs map output " +
                         shape_string(out.shape()));
  }
  Tensor residual(out.shape());
  double fit = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    residual[i] = out[i] - target[i];
    fit += residual[i] * residual[i];
  }
  const bool on_image = cfg.tv_target == TvTarget::image;
  double tv = 0.0;
  if (cfg.lambda_tv > 0.0) {
    const Tensor& tv_arg = on_image ? z : out;
    if (tv_arg.rank() == 3) tv = tv_norm(tv_arg);
  }
  const double value = fit + cfg.lambda_tv * tv;
  if (!grad || !std::isfinite(value)) return value;

  Tensor up = residual;
  for (double& v : up.values()) v *= 2.0;
  if (cfg.lambda_tv > 0.0 && !on_image && out.rank() == 3) {
    const Tensor g = tv_norm_grad(out);
    for (std::size_t i = 0; i < up.size(); ++i) up[i] += cfg.lambda_tv * g[i];
  }
  *grad = phi.backward(z, up);
  if (cfg.lambda_tv > 0.0 && on_image && z.rank() == 3) {
    const Tensor g = tv_norm_grad(z);
    for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += cfg.lambda_tv * g[i];
  }
  return value;
}

}  // namespace

double inversion_objective(const DifferentiableMap& phi, const Tensor& z, const Tensor& target,
                           const InversionConfig& cfg) {
  return objective_and_grad(phi, z, target, cfg, nullptr);
}

InversionResult invert_features(const Tensor& target, const DifferentiableMap& phi, const InversionConfig& cfg) {
  cfg.validate();
  if (!target.all_finite()) throw ValidationError("invert_features: non-finite target");
  InversionResult r;
  r.image = Tensor(phi.input_shape());
  Tensor z = r.image, grad;
  for (std::size_t n = 0; n <= cfg.iterations; ++n) {
    const bool last = n == cfg.iterations;
    const double value = objective_and_grad(phi, z, target, cfg, last ? nullptr : &grad);
    if (!std::isfinite(value) || (!last && !grad.all_finite())) {
      log_warning("inversion stopped at iteration " + std::to_string(n) + ": non-finite objective");
      r.aborted = true;
      return r;
    }
    r.image = z;
    r.iterations_run = n;
    r.final_objective = value;
    if (n % cfg.log_every == 0 || last) r.objective_log.emplace_back(n, value);
    if (last) break;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] -= cfg.beta * grad[i];
  }
  return r;
}

std::vector<std::uint8_t> salient_region_mask(const Eigen::MatrixXd& simmap, double threshold_pct, std::size_t size) {
  if (!(threshold_pct >= 0.0 && threshold_pct < 100.0)) {
    throw ValidationError("salient_region_mask: percentile must be in [0, 100)");
  }
  if (simmap.size() == 0 || !simmap.allFinite()) throw ValidationError("salient_region_mask: empty or non-finite map");
  std::vector<std::uint8_t> mask(size * size, 0);
  if (simmap.maxCoeff() == simmap.minCoeff()) {
    log_warning("salient_region_mask: constant similarity map, mask is empty");
    return mask;
  }
  cv::Mat src(static_cast<int>(simmap.rows()), static_cast<int>(simmap.cols()), CV_64F);
  for (int y = 0; y < src.rows; ++y) {
    for (int x = 0; x < src.cols; ++x) src.at<double>(y, x) = simmap(y, x);
  }
  cv::Mat up;
  cv::resize(src, up, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_LINEAR);
  std::vector<double> values(up.begin<double>(), up.end<double>());
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double pos = threshold_pct / 100.0 * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double cut = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  for (std::size_t i = 0; i < values.size(); ++i) mask[i] = values[i] >= cut ? 1 : 0;
  return mask;
}

Image overlay_mask(const Image& image, const std::vector<std::uint8_t>& mask, const float color[3], float alpha) {
  if (mask.size() != image.height * image.width) throw DimensionError("overlay_mask: mask size mismatch");
  Image out = image;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t c = 0; c < 3; ++c) out.rgb[i * 3 + c] = (1.0f - alpha) * out.rgb[i * 3 + c] + alpha * color[c];
  }
  return out;
}

Image visualize_input(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw DimensionError("visualize_input: expected [3, H, W]");
  Tensor t = chw;
  const std::size_t hw = chw.dim(1) * chw.dim(2);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) t[c * hw + i] = t[c * hw + i] * kChannelStd[c] + kChannelMean[c];
  }
  const auto [lo, hi] = std::minmax_element(t.values().begin(), t.values().end());
  const double a = *lo, b = *hi;
  if (b > a) {
    for (double& v : t.values()) v = (v - a) / (b - a);
  }
  return tensor_to_image(t);
}

}  // namespace asxai
