#include "asxai/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "asxai/errors.hpp"
#include "asxai/log.hpp"
#include "asxai/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace asxai {

namespace {

cv::Mat to_mat(const Image& img) {
  cv::Mat m(static_cast<int>(img.height), static_cast<int>(img.width), CV_32FC3);
  std::copy(img.rgb.begin(), img.rgb.end(), m.ptr<float>());
  return m;
}

Image from_mat(const cv::Mat& m) {
  cv::Mat f;
  m.convertTo(f, CV_32FC3);
  Image img(static_cast<std::size_t>(f.rows), static_cast<std::size_t>(f.cols));
  for (int y = 0; y < f.rows; ++y) {
    const float* row = f.ptr<float>(y);
    std::copy(row, row + f.cols * 3, img.rgb.begin() + static_cast<long>(y) * f.cols * 3);
  }
  for (float& v : img.rgb) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

bool decodable(const fs::path& p) {
  return !cv::imread(p.string(), cv::IMREAD_COLOR).empty();
}

}  // namespace

std::size_t DatasetManifest::image_count() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.paths.size();
  return n;
}

std::vector<std::string> DatasetManifest::class_names() const {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(c.name);
  return out;
}

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& c : classes) {
    if (c.paths.empty()) throw ValidationError("manifest: class '" + c.name + "' is empty");
    for (const auto& p : c.paths) {
      if (!seen.insert(p).second) throw ValidationError("manifest: path listed twice: " + p);
    }
  }
}

std::string DatasetManifest::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "asxai.manifest/1";
  j["root"] = root;
  j["split"] = split;
  j["image_size"] = image_size;
  j["augment"] = augment;
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : classes) j["classes"].push_back({{"name", c.name}, {"paths", c.paths}});
  return j.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  DatasetManifest m;
  m.root = j.at("root").get<std::string>();
  m.split = j.value("split", "train");
  m.image_size = j.value("image_size", kInputSize);
  m.augment = j.value("augment", false);
  for (const auto& c : j.at("classes")) {
    m.classes.push_back({c.at("name").get<std::string>(), c.at("paths").get<std::vector<std::string>>()});
  }
  m.validate();
  return m;
}

std::uint64_t DatasetManifest::hash() const {
  const std::string s = to_json();
  return fnv1a(s.data(), s.size());
}

DatasetManifest ingest_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset root not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.size() < 2) throw ValidationError("dataset needs at least 2 class folders, found " + std::to_string(dirs.size()));

  DatasetManifest m;
  m.root = root.string();
  for (const auto& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    ClassEntry entry{dir.filename().string(), {}};
    for (const auto& f : files) {
      if (decodable(f)) {
        entry.paths.push_back(fs::relative(f, root).generic_string());
      } else {
        log_warning("skipping undecodable image " + f.string());
      }
    }
    if (entry.paths.empty()) throw ValidationError("class folder '" + entry.name + "' has no decodable images");
    m.classes.push_back(std::move(entry));
  }
  m.validate();
  return m;
}

DatasetManifest ingest_csv(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open " + csv.string());
  const fs::path base = csv.parent_path();
  DatasetManifest m;
  m.root = base.string();
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw ValidationError("csv manifest: malformed row: " + line);
    std::string path = line.substr(0, comma), label = line.substr(comma + 1);
    if (first && path == "path" && label == "label") {
      first = false;
      continue;
    }
    first = false;
    if (!decodable(base / path)) {
      log_warning("skipping undecodable image " + (base / path).string());
      continue;
    }
    auto it = std::find_if(m.classes.begin(), m.classes.end(), [&](const ClassEntry& c) { return c.name == label; });
    if (it == m.classes.end()) {
      m.classes.push_back({label, {}});
      it = m.classes.end() - 1;
    }
    it->paths.push_back(path);
  }
  std::sort(m.classes.begin(), m.classes.end(), [](const ClassEntry& a, const ClassEntry& b) { return a.name < b.name; });
  if (m.classes.size() < 2) throw ValidationError("csv manifest needs at least 2 classes");
  m.validate();
  return m;
}

Image load_image(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
  return from_mat(f);
}

bool save_image(const Image& image, const std::string& path) {
  cv::Mat f = to_mat(image), bgr, u8;
  cv::cvtColor(f, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(u8, CV_8UC3, 255.0);
  return cv::imwrite(path, u8);
}

Image augment(const Image& image, std::uint64_t seed, const AugmentConfig& cfg) {
  if (!cfg.enabled) return resize_bilinear(image, kInputSize, kInputSize);
  Rng rng(seed);
  cv::Mat src = to_mat(image);
  const float w = static_cast<float>(src.cols), h = static_cast<float>(src.rows);

  // rotation + shear about the centre
  const double angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  cv::Mat rot = cv::getRotationMatrix2D(cv::Point2f(w / 2, h / 2), angle, 1.0);
  const double shear = rng.uniform(-cfg.max_shear, cfg.max_shear);
  cv::Mat affine = rot.clone();
  affine.at<double>(0, 1) += shear;
  affine.at<double>(0, 2) -= shear * h / 2;
  cv::Mat out;
  cv::warpAffine(src, out, affine, src.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT);

  // skew: jitter the four corners
  std::vector<cv::Point2f> from{{0, 0}, {w, 0}, {w, h}, {0, h}}, to = from;
  for (auto& p : to) {
    p.x += static_cast<float>(rng.uniform(-cfg.max_skew, cfg.max_skew)) * w;
    p.y += static_cast<float>(rng.uniform(-cfg.max_skew, cfg.max_skew)) * h;
  }
  cv::warpPerspective(out, out, cv::getPerspectiveTransform(from, to), src.size(), cv::INTER_LINEAR,
                      cv::BORDER_REFLECT);

  // smooth random displacement from a coarse 4x4 grid
  if (cfg.distortion > 0.0) {
    cv::Mat gx(4, 4, CV_32F), gy(4, 4, CV_32F);
    for (int i = 0; i < 16; ++i) {
      gx.at<float>(i / 4, i % 4) = static_cast<float>(rng.uniform(-cfg.distortion, cfg.distortion)) * w;
      gy.at<float>(i / 4, i % 4) = static_cast<float>(rng.uniform(-cfg.distortion, cfg.distortion)) * h;
    }
    cv::Mat dx, dy;
    cv::resize(gx, dx, src.size(), 0, 0, cv::INTER_CUBIC);
    cv::resize(gy, dy, src.size(), 0, 0, cv::INTER_CUBIC);
    cv::Mat mapx(src.size(), CV_32F), mapy(src.size(), CV_32F);
    for (int y = 0; y < src.rows; ++y) {
      for (int x = 0; x < src.cols; ++x) {
        mapx.at<float>(y, x) = static_cast<float>(x) + dx.at<float>(y, x);
        mapy.at<float>(y, x) = static_cast<float>(y) + dy.at<float>(y, x);
      }
    }
    cv::remap(out, out, mapx, mapy, cv::INTER_LINEAR, cv::BORDER_REFLECT);
  }
  return resize_bilinear(from_mat(out), kInputSize, kInputSize);
}

LoadedImages load_images(const DatasetManifest& manifest, std::uint64_t seed, const AugmentConfig& cfg) {
  manifest.validate();
  LoadedImages out;
  AugmentConfig local = cfg;
  local.enabled = manifest.augment && cfg.enabled;
  std::size_t index = 0;
  for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
    for (const auto& p : manifest.classes[c].paths) {
      const fs::path full = fs::path(manifest.root) / p;
      out.images.push_back(augment(load_image(full.string()), derive_seed(seed, {0x617567, index++}), local));
      out.labels.push_back(static_cast<int>(c));
      out.ids.push_back(p);
    }
  }
  return out;
}

TrainingSet load_training_set(const DatasetManifest& manifest, std::uint64_t seed, const AugmentConfig& cfg) {
  LoadedImages loaded = load_images(manifest, seed, cfg);
  TrainingSet set;
  set.images = images_to_tensor(loaded.images);
  set.labels = std::move(loaded.labels);
  set.ids = std::move(loaded.ids);
  return set;
}

std::vector<ToyImage> make_toy_images(std::size_t per_class, std::uint64_t seed) {
  constexpr std::size_t kSide = 32;
  std::vector<ToyImage> out;
  for (int label = 0; label < 2; ++label) {
    for (std::size_t k = 0; k < per_class; ++k) {
      Rng rng(derive_seed(seed, {0x746f79, static_cast<std::uint64_t>(label), k}));
      Image small(kSide, kSide);
      for (float& v : small.rgb) v = static_cast<float>(std::clamp(0.5 + rng.normal(0.0, 0.06), 0.0, 1.0));

      // stripe patch (12x12) in the left or right half, shape in the other
      const bool stripes_left = rng.uniform() < 0.5;
      const std::size_t sy = 2 + rng.index(kSide - 16), sx = (stripes_left ? 1 : 17) + rng.index(3);
      for (std::size_t y = 0; y < 12; ++y) {
        for (std::size_t x = 0; x < 12; ++x) {
          const std::size_t phase = label == 0 ? y : x;
          const float v = (phase / 2) % 2 == 0 ? 0.95f : 0.05f;
          for (std::size_t c = 0; c < 3; ++c) small.at(sy + y, sx + x, c) = v;
        }
      }
      const double cy = 6.0 + static_cast<double>(rng.index(kSide - 12));
      const double cx = (stripes_left ? 22.0 : 6.0) + static_cast<double>(rng.index(4));
      for (std::size_t y = 0; y < kSide; ++y) {
        for (std::size_t x = 0; x < kSide; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
          const bool inside = label == 0 ? (std::abs(dy) <= 4.0 && std::abs(dx) <= 4.0) : (dy * dy + dx * dx <= 20.0);
          if (!inside) continue;
          small.at(y, x, 0) = label == 0 ? 0.9f : 0.1f;
          small.at(y, x, 1) = 0.1f;
          small.at(y, x, 2) = label == 0 ? 0.1f : 0.9f;
        }
      }
      char name[32];
      std::snprintf(name, sizeof name, "%04zu.png", k);
      out.push_back({resize_bilinear(small, kInputSize, kInputSize), label, kToyClasses[static_cast<std::size_t>(label)] + "/" + name});
    }
  }
  return out;
}

TrainingSet toy_training_set(const std::vector<ToyImage>& images) {
  std::vector<Image> raw;
  TrainingSet set;
  for (const auto& t : images) {
    raw.push_back(t.image);
    set.labels.push_back(t.label);
    set.ids.push_back(t.id);
  }
  set.images = images_to_tensor(raw);
  return set;
}

void write_toy_dataset(const std::vector<ToyImage>& images, const fs::path& root) {
  for (const auto& name : kToyClasses) fs::create_directories(root / name);
  for (const auto& t : images) {
    if (!save_image(t.image, (root / t.id).string())) throw IoError("cannot write " + (root / t.id).string());
  }
}

}  // namespace asxai
