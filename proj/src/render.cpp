#include "asxai/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "asxai/errors.hpp"

namespace asxai {

namespace {

const cv::Scalar kInk(40, 40, 40);
const cv::Scalar kGrid(215, 215, 215);
const cv::Scalar kPalette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75}};

// drawing happens in RGB order, so the Mat converts straight to Image
Image to_image(const cv::Mat& rgb8) {
  Image img(static_cast<std::size_t>(rgb8.rows), static_cast<std::size_t>(rgb8.cols));
  for (int y = 0; y < rgb8.rows; ++y) {
    const auto* row = rgb8.ptr<cv::Vec3b>(y);
    for (int x = 0; x < rgb8.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(row[x][c]) / 255.0f;
    }
  }
  return img;
}

void text(cv::Mat& m, const std::string& s, cv::Point at, double scale = 0.45, cv::Scalar color = kInk) {
  cv::putText(m, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, color, 1, cv::LINE_AA);
}

void centered_text(cv::Mat& m, const std::string& s, cv::Point center, double scale = 0.45) {
  int base = 0;
  const cv::Size sz = cv::getTextSize(s, cv::FONT_HERSHEY_SIMPLEX, scale, 1, &base);
  text(m, s, {center.x - sz.width / 2, center.y + sz.height / 2}, scale);
}

std::string fmt(double v, const char* pattern = "%.3f") {
  char buf[32];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

}  // namespace

Image render_similarity_histogram(const ExplanationReport& report) {
  const std::size_t n = report.global_similarity.size();
  if (n == 0 || n != report.class_labels.size()) throw ValidationError("similarity histogram needs one score per class");
  const int bar = 60, gap = 30, left = 60, top = 56, plot_h = 240;
  const int width = left + static_cast<int>(n) * (bar + gap) + gap;
  cv::Mat m(top + plot_h + 70, std::max(width, 320), CV_8UC3, cv::Scalar(255, 255, 255));

  double lo = 0.0, hi = 0.0;
  for (double v : report.global_similarity) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  auto y_of = [&](double v) { return top + static_cast<int>(std::lround((hi - v) / (hi - lo) * plot_h)); };

  text(m, "global similarity: " + report.image_id, {10, 22}, 0.5);
  cv::line(m, {left - 5, y_of(0.0)}, {m.cols - 10, y_of(0.0)}, kInk, 1);
  cv::line(m, {left - 5, top}, {left - 5, top + plot_h}, kInk, 1);
  text(m, fmt(hi, "%.2f"), {4, top + 5}, 0.35);
  text(m, fmt(lo, "%.2f"), {4, top + plot_h}, 0.35);
  for (std::size_t c = 0; c < n; ++c) {
    const int x = left + gap + static_cast<int>(c) * (bar + gap);
    const double v = report.global_similarity[c];
    const bool predicted = report.class_labels[c] == report.predicted_class;
    const cv::Scalar color = predicted ? kPalette[3] : kPalette[0];
    cv::rectangle(m, cv::Point(x, std::min(y_of(v), y_of(0.0))), cv::Point(x + bar, std::max(y_of(v), y_of(0.0))), color,
                  cv::FILLED);
    centered_text(m, fmt(v), {x + bar / 2, std::min(y_of(v), y_of(0.0)) - 10}, 0.38);
    centered_text(m, report.class_labels[c], {x + bar / 2, top + plot_h + 20}, 0.4);
    if (c < report.probabilities.size()) {
      centered_text(m, "p=" + fmt(report.probabilities[c], "%.2f"), {x + bar / 2, top + plot_h + 42}, 0.38);
    }
  }
  return to_image(m);
}

Image render_bubble_ring(const ExplanationReport& report) {
  const auto ring = report.bubble_ring();
  const int size = 520, cx = size / 2, cy = size / 2 + 10, radius = 170;
  cv::Mat m(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  text(m, report.image_id + ": " + report.named_class, {10, 22}, 0.5);
  cv::circle(m, {cx, cy}, radius, kGrid, 1, cv::LINE_AA);

  double biggest = 1e-12;
  for (const auto& [name, per_class] : ring) {
    for (const auto& [cls, v] : per_class) biggest = std::max(biggest, std::abs(v));
  }
  const std::size_t k = std::max<std::size_t>(ring.size(), 1);
  std::size_t i = 0;
  for (const auto& [name, per_class] : ring) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k) - std::numbers::pi / 2;
    const cv::Point center(cx + static_cast<int>(std::lround(radius * std::cos(angle))),
                           cy + static_cast<int>(std::lround(radius * std::sin(angle))));
    std::size_t j = 0;
    for (const auto& cls : report.candidates) {
      const auto it = per_class.find(cls);
      const double v = it == per_class.end() ? 0.0 : it->second;
      const int r = std::max(2, static_cast<int>(std::lround(45.0 * std::sqrt(std::abs(v) / biggest))));
      const int offset = (static_cast<int>(j) * 2 - static_cast<int>(report.candidates.size() - 1)) * 18;
      const cv::Point at(center.x + offset, center.y);
      cv::circle(m, at, r, kPalette[j % 6], v >= 0 ? cv::FILLED : 2, cv::LINE_AA);
      ++j;
    }
    centered_text(m, name, {center.x, center.y + 58}, 0.42);
    ++i;
  }
  for (std::size_t j = 0; j < report.candidates.size(); ++j) {
    const int y = size - 20 - static_cast<int>(j) * 20;
    cv::circle(m, {18, y - 4}, 6, kPalette[j % 6], cv::FILLED, cv::LINE_AA);
    text(m, report.candidates[j], {30, y}, 0.42);
  }
  return to_image(m);
}

Image render_boxplots(const PerceptReport& report) {
  if (report.concepts.empty() || report.domains.empty()) throw ValidationError("box plots need at least one cell");
  const int cell_w = 110, cell_h = 170, left = 150, top = 40;
  const int rows = static_cast<int>(report.concepts.size()), cols = static_cast<int>(report.domains.size());
  cv::Mat m(top + rows * cell_h + 30, left + cols * cell_w + 10, CV_8UC3, cv::Scalar(255, 255, 255));
  text(m, "perception sensitivity (delta)", {10, 22}, 0.5);

  for (int r = 0; r < rows; ++r) {
    double lo = 0.0, hi = 0.0;
    for (PerceptDomain d : report.domains) {
      const BoxStats& s = report.cell(report.concepts[r], d).stats;
      lo = std::min(lo, s.min);
      hi = std::max(hi, s.max);
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const int y0 = top + r * cell_h + 10, h = cell_h - 30;
    auto y_of = [&](double v) { return y0 + static_cast<int>(std::lround((hi - v) / (hi - lo) * h)); };
    text(m, report.concepts[r], {8, y0 + h / 2}, 0.42);
    text(m, fmt(hi, "%.2g"), {left - 42, y0 + 5}, 0.33);
    text(m, fmt(lo, "%.2g"), {left - 42, y0 + h}, 0.33);
    cv::line(m, {left, y_of(0.0)}, {left + cols * cell_w, y_of(0.0)}, kGrid, 1);
    for (int c = 0; c < cols; ++c) {
      const BoxStats& s = report.cell(report.concepts[r], report.domains[c]).stats;
      const int mid = left + c * cell_w + cell_w / 2, half = 22;
      const cv::Scalar color = kPalette[c % 6];
      cv::line(m, {mid, y_of(s.whisker_low)}, {mid, y_of(s.q1)}, kInk, 1);
      cv::line(m, {mid, y_of(s.q3)}, {mid, y_of(s.whisker_high)}, kInk, 1);
      cv::line(m, {mid - half / 2, y_of(s.whisker_low)}, {mid + half / 2, y_of(s.whisker_low)}, kInk, 1);
      cv::line(m, {mid - half / 2, y_of(s.whisker_high)}, {mid + half / 2, y_of(s.whisker_high)}, kInk, 1);
      cv::rectangle(m, cv::Point(mid - half, y_of(s.q3)), cv::Point(mid + half, y_of(s.q1)), color, cv::FILLED);
      cv::rectangle(m, cv::Point(mid - half, y_of(s.q3)), cv::Point(mid + half, y_of(s.q1)), kInk, 1);
      cv::line(m, {mid - half, y_of(s.median)}, {mid + half, y_of(s.median)}, kInk, 2);
      for (double o : s.outliers) cv::circle(m, {mid, y_of(o)}, 2, kInk, 1, cv::LINE_AA);
    }
  }
  for (int c = 0; c < cols; ++c) {
    centered_text(m, to_string(report.domains[c]), {left + c * cell_w + cell_w / 2, top + rows * cell_h + 5}, 0.42);
  }
  return to_image(m);
}

}  // namespace asxai
