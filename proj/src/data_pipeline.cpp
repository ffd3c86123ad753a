#include "zerolight/data_pipeline.hpp"

#include "zerolight/errors.hpp"
#include "zerolight/image_io.hpp"
#include "zerolight/rng.hpp"
#include "zerolight/tensor_archive.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <iostream>
#include <numeric>
#include <random>
#include <thread>
#include <unordered_map>

namespace zerolight {

namespace {

std::string json_id(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ParseError("manifest: ids must be strings or integers");
}

std::string line_context(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  const std::size_t line = static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte, '\n')) + 1;
  std::size_t start = text.rfind('\n', byte == 0 ? 0 : byte - 1);
  start = start == std::string::npos ? 0 : start + 1;
  std::size_t end = text.find('\n', start);
  if (end == std::string::npos) end = text.size();
  return "line " + std::to_string(line) + ", column " + std::to_string(byte - start + 1) + ": " +
         text.substr(start, std::min<std::size_t>(end - start, 200));
}

void warn(AnnotationReport& report, std::string message) { report.warnings.push_back(std::move(message)); }

}  // namespace

std::vector<AnnotationRecord> parse_annotations(const std::string& text, const std::filesystem::path& base_dir,
                                                const AnnotationOptions& options, AnnotationReport* report_out) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("manifest: malformed JSON at " + line_context(text, e.byte == 0 ? 0 : e.byte - 1));
  }
  AnnotationReport report;
  std::vector<AnnotationRecord> records;
  std::unordered_map<std::string, std::size_t> index;
  try {
    if (!doc.is_object()) throw ParseError("manifest: top level must be an object");
    for (const auto& img : doc.value("images", nlohmann::json::array())) {
      AnnotationRecord r;
      r.image_id = json_id(img.at("id"));
      r.image_path = base_dir / img.at("file").get<std::string>();
      r.width = img.at("width").get<int>();
      r.height = img.at("height").get<int>();
      if (r.width <= 0 || r.height <= 0) throw ParseError("manifest: image " + r.image_id + " has no area");
      if (!index.emplace(r.image_id, records.size()).second) {
        throw ParseError("manifest: duplicate image id " + r.image_id);
      }
      records.push_back(std::move(r));
    }
    report.images = records.size();
    for (const auto& ann : doc.value("annotations", nlohmann::json::array())) {
      const std::string image_id = json_id(ann.at("image_id"));
      auto it = index.find(image_id);
      if (it == index.end()) throw ParseError("manifest: annotation refers to unknown image " + image_id);
      auto& rec = records[it->second];
      std::optional<double> score;
      if (ann.contains("score") && !ann.at("score").is_null()) {
        score = ann.at("score").get<double>();
        if (!(*score >= 0 && *score <= 1)) throw ParseError("manifest: score outside [0, 1] on image " + image_id);
        if (*score < options.min_score) {
          ++report.filtered_by_score;
          continue;
        }
      }
      const auto& b = ann.at("bbox");
      if (!b.is_array() || b.size() != 4) throw ParseError("manifest: bbox must be [x, y, w, h]");
      const double x0 = std::clamp(b[0].get<double>(), 0.0, static_cast<double>(rec.width));
      const double y0 = std::clamp(b[1].get<double>(), 0.0, static_cast<double>(rec.height));
      const double x1 = std::clamp(b[0].get<double>() + b[2].get<double>(), 0.0, static_cast<double>(rec.width));
      const double y1 = std::clamp(b[1].get<double>() + b[3].get<double>(), 0.0, static_cast<double>(rec.height));
      if (!(x1 - x0 > 0) || !(y1 - y0 > 0)) {
        ++report.degenerate_boxes;
        warn(report, "image " + image_id + ": box with no area after clamping dropped");
        continue;
      }
      std::string label;
      try {
        label = normalize_label(ann.at("label").get<std::string>());
      } catch (const std::invalid_argument&) {
        throw ParseError("manifest: empty label on image " + image_id);
      }
      rec.annotations.push_back({BBox{x0, y0, x1 - x0, y1 - y0}, ClassLabel(label), score});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }

  std::vector<AnnotationRecord> kept;
  for (auto& r : records) {
    if (r.annotations.empty()) {
      ++report.empty_records;
      warn(report, "image " + r.image_id + ": no valid boxes, record dropped");
      continue;
    }
    if (options.require_files && !std::filesystem::exists(r.image_path)) {
      ++report.missing_images;
      warn(report, "image " + r.image_id + ": missing file " + r.image_path.string());
      continue;
    }
    report.kept_annotations += r.annotations.size();
    kept.push_back(std::move(r));
  }
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  if (report_out) *report_out = std::move(report);
  return kept;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& manifest,
                                               const AnnotationOptions& options, AnnotationReport* report) {
  std::string text;
  try {
    text = read_text_file(manifest);
  } catch (const std::exception&) {
    throw ConfigError("cannot read manifest " + manifest.string());
  }
  try {
    return parse_annotations(text, manifest.parent_path(), options, report);
  } catch (const ParseError& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
}

CropWindow patch_window(const BBox& bbox, int image_height, int image_width, int min_context) {
  if (image_height <= 0 || image_width <= 0) throw std::invalid_argument("extract_patch: empty image");
  if (min_context < 0) throw std::invalid_argument("extract_patch: min_context must be non-negative");
  if (!std::isfinite(bbox.x) || !std::isfinite(bbox.y) || !std::isfinite(bbox.w) || !std::isfinite(bbox.h)) {
    throw std::invalid_argument("extract_patch: non-finite box");
  }
  const auto clamp_round = [](double v, int hi) {
    return static_cast<int>(std::clamp(std::round(v), 0.0, static_cast<double>(hi)));
  };
  const int x0 = clamp_round(bbox.x, image_width);
  const int x1 = clamp_round(bbox.x + bbox.w, image_width);
  const int y0 = clamp_round(bbox.y, image_height);
  const int y1 = clamp_round(bbox.y + bbox.h, image_height);
  if (x1 <= x0 || y1 <= y0) throw std::invalid_argument("extract_patch: box has zero area after clamping");

  int w = x1 - x0;
  int h = y1 - y0;
  if (std::max(w, h) < min_context) {
    w = std::max(w, min_context);
    h = std::max(h, min_context);
  }
  const int side = std::max(w, h);
  w = std::min(side, image_width);
  h = std::min(side, image_height);

  // Center in half-pixel units keeps odd sizes symmetric.
  const auto place = [](int lo, int hi, int size, int limit) {
    int start = (lo + hi - size) / 2;
    return std::clamp(start, 0, limit - size);
  };
  CropWindow win;
  win.x0 = place(x0, x1, w, image_width);
  win.y0 = place(y0, y1, h, image_height);
  win.x1 = win.x0 + w;
  win.y1 = win.y0 + h;
  return win;
}

// ---------------------------------------------------------------------------

MixtureStream::MixtureStream(std::vector<DatasetSpec> datasets, std::uint64_t seed, PatchOptions options)
    : datasets_(std::move(datasets)), seed_(seed), options_(options) {
  if (datasets_.empty()) throw ConfigError("mixture: no datasets");
  if (options_.out_size < 1 || options_.min_context < 0 || options_.workers < 1) {
    throw ConfigError("mixture: invalid patch options");
  }
  std::size_t total = 0;
  instances_.resize(datasets_.size());
  for (std::size_t d = 0; d < datasets_.size(); ++d) {
    const auto& recs = datasets_[d].records;
    for (std::size_t r = 0; r < recs.size(); ++r)
      for (std::size_t a = 0; a < recs[r].annotations.size(); ++a) instances_[d].push_back({d, r, a});
    total += instances_[d].size();
    if (!(datasets_[d].weight >= 0) || !std::isfinite(datasets_[d].weight)) {
      throw ConfigError("mixture: weights must be non-negative");
    }
  }
  if (total == 0) throw ConfigError("mixture: every dataset is empty");
  double sum = 0;
  probabilities_.resize(datasets_.size());
  for (std::size_t d = 0; d < datasets_.size(); ++d) {
    const double w = instances_[d].empty() ? 0.0
                     : datasets_[d].weight > 0 ? datasets_[d].weight
                                               : static_cast<double>(instances_[d].size());
    probabilities_[d] = w;
    sum += w;
  }
  if (!(sum > 0)) throw ConfigError("mixture: total weight is zero");
  for (auto& p : probabilities_) p /= sum;
  epoch_.assign(datasets_.size(), 0);
  cursor_.assign(datasets_.size(), 0);
  order_.resize(datasets_.size());
  for (std::size_t d = 0; d < datasets_.size(); ++d) order_[d] = permutation(d, 0);
}

std::vector<std::size_t> MixtureStream::permutation(std::size_t dataset, std::uint64_t epoch) const {
  std::vector<std::size_t> order(instances_[dataset].size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed({seed_, 0x5a5a, dataset, epoch}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

MixtureStream::Ref MixtureStream::next_ref() {
  std::mt19937_64 rng(derive_seed({seed_, 0xd1ce, draws_}));
  ++draws_;
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::size_t d = 0;
  double acc = 0;
  for (; d + 1 < probabilities_.size(); ++d) {
    acc += probabilities_[d];
    if (u < acc && probabilities_[d] > 0) break;
  }
  while (probabilities_[d] == 0) --d;  // u landed in rounding slack at the end
  if (cursor_[d] == order_[d].size()) {
    ++epoch_[d];
    cursor_[d] = 0;
    order_[d] = permutation(d, epoch_[d]);
  }
  return instances_[d][order_[d][cursor_[d]++]];
}

std::shared_ptr<const Imagef> MixtureStream::image(const std::filesystem::path& path) const {
  {
    std::lock_guard lock(cache_mutex_);
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
  }
  auto img = std::make_shared<const Imagef>(load_image(path));
  std::lock_guard lock(cache_mutex_);
  auto [it, inserted] = cache_.try_emplace(path, img);
  if (inserted) {
    cache_fifo_.push_back(path);
    while (cache_fifo_.size() > std::max<std::size_t>(options_.image_cache, 1)) {
      cache_.erase(cache_fifo_.front());
      cache_fifo_.erase(cache_fifo_.begin());
    }
  }
  return it == cache_.end() ? img : it->second;
}

PatchSample MixtureStream::load(const Ref& ref) const {
  const auto& ds = datasets_.at(ref.dataset);
  const auto& rec = ds.records.at(ref.record);
  const auto& ann = rec.annotations.at(ref.annotation);
  const auto img = image(rec.image_path);
  // The manifest's size was used for clamping; rescale if the file differs.
  BBox box = ann.bbox;
  if (img->width() != rec.width || img->height() != rec.height) {
    const double sx = static_cast<double>(img->width()) / rec.width;
    const double sy = static_cast<double>(img->height()) / rec.height;
    box = {box.x * sx, box.y * sy, box.w * sx, box.h * sy};
  }
  PatchSample s;
  s.patch = extract_patch(*img, box, options_.out_size, options_.min_context);
  s.label = ann.label.name();
  s.dataset_id = ds.id;
  s.image_id = rec.image_id;
  s.sample_id = ds.id + "/" + rec.image_id + "#" + std::to_string(ref.annotation);
  return s;
}

std::vector<PatchSample> MixtureStream::next_batch(std::size_t n) {
  std::vector<Ref> refs(n);
  for (auto& r : refs) r = next_ref();
  std::vector<PatchSample> out(n);
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(options_.workers), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = load(refs[i]);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) out[i] = load(refs[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

nlohmann::json MixtureStream::state() const {
  return {{"kind", "mixture"}, {"seed", seed_}, {"draws", draws_}, {"epoch", epoch_}, {"cursor", cursor_}};
}

void MixtureStream::restore(const nlohmann::json& state) {
  try {
    if (state.at("kind") != "mixture" || state.at("seed").get<std::uint64_t>() != seed_) {
      throw InvalidState("mixture: state belongs to a different stream");
    }
    auto epoch = state.at("epoch").get<std::vector<std::uint64_t>>();
    auto cursor = state.at("cursor").get<std::vector<std::uint64_t>>();
    if (epoch.size() != datasets_.size() || cursor.size() != datasets_.size()) {
      throw InvalidState("mixture: state has a different dataset count");
    }
    for (std::size_t d = 0; d < datasets_.size(); ++d) {
      if (cursor[d] > instances_[d].size()) throw InvalidState("mixture: cursor out of range");
      order_[d] = permutation(d, epoch[d]);
    }
    draws_ = state.at("draws").get<std::uint64_t>();
    epoch_ = std::move(epoch);
    cursor_ = std::move(cursor);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("mixture state: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

FixedPatchSource::FixedPatchSource(std::vector<PatchSample> patches, std::uint64_t seed)
    : patches_(std::move(patches)), seed_(seed) {
  if (patches_.empty()) throw ConfigError("fixed patch source: no patches");
  reshuffle();
}

void FixedPatchSource::reshuffle() {
  order_.resize(patches_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed({seed_, 0xf17ed, epoch_}));
  std::shuffle(order_.begin(), order_.end(), rng);
}

std::vector<PatchSample> FixedPatchSource::next_batch(std::size_t n) {
  std::vector<PatchSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      cursor_ = 0;
      reshuffle();
    }
    out.push_back(patches_[order_[cursor_++]]);
  }
  return out;
}

nlohmann::json FixedPatchSource::state() const {
  return {{"kind", "fixed"}, {"seed", seed_}, {"size", patches_.size()}, {"epoch", epoch_}, {"cursor", cursor_}};
}

void FixedPatchSource::restore(const nlohmann::json& state) {
  try {
    if (state.at("kind") != "fixed" || state.at("seed").get<std::uint64_t>() != seed_ ||
        state.at("size").get<std::size_t>() != patches_.size()) {
      throw InvalidState("fixed patch source: state belongs to a different source");
    }
    epoch_ = state.at("epoch").get<std::uint64_t>();
    cursor_ = state.at("cursor").get<std::size_t>();
    if (cursor_ > patches_.size()) throw InvalidState("fixed patch source: cursor out of range");
    reshuffle();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("fixed patch source state: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

int brightness_bin(double mean_brightness) {
  const int b = static_cast<int>(std::floor(std::clamp(mean_brightness, 0.0, 1.0) * kBrightnessBins));
  return std::min(b, kBrightnessBins - 1);
}

DatasetStats compute_stats(const std::vector<StatsInput>& inputs) {
  DatasetStats stats;
  std::size_t total = 0;
  for (const auto& in : inputs) {
    DatasetStatsEntry e;
    e.id = in.id;
    for (const auto& path : in.images) {
      try {
        const Imagef img = load_image(path);
        ++e.histogram[static_cast<std::size_t>(brightness_bin(img.planes().cast<double>().mean()))];
        ++e.images;
      } catch (const std::exception&) {
        ++e.unreadable;
      }
    }
    e.samples = in.samples > 0 ? in.samples : e.images;
    total += e.samples;
    stats.datasets.push_back(std::move(e));
  }
  for (auto& e : stats.datasets) {
    e.proportion = total > 0 ? static_cast<double>(e.samples) / static_cast<double>(total) : 0.0;
  }
  return stats;
}

StatsInput stats_input_from_path(const std::filesystem::path& path, const AnnotationOptions& options) {
  StatsInput in;
  in.id = path.stem().string();
  if (std::filesystem::is_directory(path)) {
    in.images = list_images(path);
    return in;
  }
  AnnotationOptions opts = options;
  opts.require_files = false;
  for (const auto& rec : load_annotations(path, opts)) {
    in.images.push_back(rec.image_path);
    in.samples += rec.annotations.size();
  }
  return in;
}

nlohmann::json stats_to_json(const DatasetStats& stats) {
  nlohmann::json out = {{"bins", kBrightnessBins}, {"range", {0.0, 1.0}}, {"datasets", nlohmann::json::array()}};
  for (const auto& e : stats.datasets) {
    out["datasets"].push_back({{"id", e.id},
                               {"samples", e.samples},
                               {"proportion", e.proportion},
                               {"images", e.images},
                               {"unreadable", e.unreadable},
                               {"brightness_histogram", e.histogram}});
  }
  return out;
}

}  // namespace zerolight
