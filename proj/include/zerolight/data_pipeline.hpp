#pragma once

#include "zerolight/image.hpp"
#include "zerolight/resize.hpp"
#include "zerolight/semantic_guidance.hpp"

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace zerolight {

/// Pixel box: top-left corner plus size.
struct BBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;
};

struct Annotation {
  BBox bbox;
  ClassLabel label;
  std::optional<double> score;
};

struct AnnotationRecord {
  std::string image_id;
  std::filesystem::path image_path;
  int width = 0;
  int height = 0;
  std::vector<Annotation> annotations;
};

struct AnnotationOptions {
  /// Annotations carrying a score below this are dropped. Unscored ones are
  /// always kept.
  double min_score = 0.3;
  /// Skip records whose image file is missing.
  bool require_files = true;
};

struct AnnotationReport {
  std::size_t images = 0;
  std::size_t kept_annotations = 0;
  std::size_t filtered_by_score = 0;
  std::size_t degenerate_boxes = 0;
  std::size_t missing_images = 0;
  std::size_t empty_records = 0;
  std::vector<std::string> warnings;
};

/// Reads a manifest:
///   {"images": [{"id", "file", "width", "height"}],
///    "annotations": [{"image_id", "bbox": [x, y, w, h], "label", "score"?}]}
/// Image files are resolved relative to the manifest. Boxes are clamped to
/// the image; records left without boxes are dropped with a warning.
/// Malformed JSON raises ParseError with the offending line.
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& manifest,
                                               const AnnotationOptions& options = {},
                                               AnnotationReport* report = nullptr);

/// Same, from an in-memory document; `base_dir` resolves image files.
std::vector<AnnotationRecord> parse_annotations(const std::string& text, const std::filesystem::path& base_dir,
                                                const AnnotationOptions& options = {},
                                                AnnotationReport* report = nullptr);

/// Integer crop window [x0, x1) x [y0, y1).
struct CropWindow {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

/// Window used by extract_patch: the box clamped and rounded to pixels,
/// grown around its center to min_context per side when max(w, h) is below
/// it, squared by growing the shorter side where the image allows, then
/// shifted back inside the image.
CropWindow patch_window(const BBox& bbox, int image_height, int image_width, int min_context = 64);

template <typename Scalar>
Image<Scalar> crop(const Image<Scalar>& image, const CropWindow& win) {
  if (win.x0 < 0 || win.y0 < 0 || win.x1 > image.width() || win.y1 > image.height() || win.width() <= 0 ||
      win.height() <= 0) {
    throw std::invalid_argument("crop: window outside image");
  }
  Image<Scalar> out(win.height(), win.width());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < win.height(); ++y)
      for (int x = 0; x < win.width(); ++x) out(c, y, x) = image(c, win.y0 + y, win.x0 + x);
  return out;
}

/// Context-expanded square crop resized (bilinear) to out_size^2.
template <typename Scalar>
Image<Scalar> extract_patch(const Image<Scalar>& image, const BBox& bbox, int out_size = 224, int min_context = 64) {
  if (out_size < 1) throw std::invalid_argument("extract_patch: out_size must be positive");
  const CropWindow win = patch_window(bbox, image.height(), image.width(), min_context);
  return resize_bilinear(crop(image, win), out_size, out_size);
}

struct PatchSample {
  Imagef patch;
  std::string label;
  std::string dataset_id;
  std::string image_id;
  /// "<dataset>/<image>#<annotation index>"
  std::string sample_id;
};

/// Source of training batches with a serializable position, so a resumed
/// run continues the exact same sequence.
class PatchSource {
 public:
  virtual ~PatchSource() = default;
  virtual std::vector<PatchSample> next_batch(std::size_t n) = 0;
  virtual nlohmann::json state() const = 0;
  virtual void restore(const nlohmann::json& state) = 0;
};

struct DatasetSpec {
  std::string id;
  std::vector<AnnotationRecord> records;
  /// Sampling weight; 0 selects the dataset's instance count.
  double weight = 0;
};

struct PatchOptions {
  int out_size = 224;
  int min_context = 64;
  /// Patch extraction threads per batch. Output order never depends on it.
  int workers = 1;
  /// Decoded source images kept in memory.
  std::size_t image_cache = 64;
};

/// Infinite stream over several datasets. Each draw picks a dataset with
/// probability proportional to its weight, then takes the next instance of
/// that dataset's current epoch permutation. Everything is a pure function
/// of (seed, draw counter, per-dataset epoch and cursor).
class MixtureStream final : public PatchSource {
 public:
  MixtureStream(std::vector<DatasetSpec> datasets, std::uint64_t seed, PatchOptions options = {});

  struct Ref {
    std::size_t dataset = 0;
    std::size_t record = 0;
    std::size_t annotation = 0;
  };

  /// Advances the stream by one draw without decoding anything.
  Ref next_ref();
  PatchSample load(const Ref& ref) const;

  std::vector<PatchSample> next_batch(std::size_t n) override;
  nlohmann::json state() const override;
  void restore(const nlohmann::json& state) override;

  const std::vector<double>& probabilities() const { return probabilities_; }
  std::size_t dataset_count() const { return datasets_.size(); }
  std::size_t instance_count(std::size_t dataset) const { return instances_.at(dataset).size(); }
  const DatasetSpec& dataset(std::size_t i) const { return datasets_.at(i); }

 private:
  std::vector<std::size_t> permutation(std::size_t dataset, std::uint64_t epoch) const;
  std::shared_ptr<const Imagef> image(const std::filesystem::path& path) const;

  std::vector<DatasetSpec> datasets_;
  std::vector<std::vector<Ref>> instances_;
  std::vector<double> probabilities_;
  std::uint64_t seed_;
  PatchOptions options_;

  std::uint64_t draws_ = 0;
  std::vector<std::uint64_t> epoch_;
  std::vector<std::uint64_t> cursor_;
  std::vector<std::vector<std::size_t>> order_;  // current epoch permutation per dataset

  mutable std::mutex cache_mutex_;
  mutable std::map<std::filesystem::path, std::shared_ptr<const Imagef>> cache_;
  mutable std::vector<std::filesystem::path> cache_fifo_;
};

/// Cycles a fixed set of patches in seeded per-epoch shuffles.
class FixedPatchSource final : public PatchSource {
 public:
  FixedPatchSource(std::vector<PatchSample> patches, std::uint64_t seed);

  std::vector<PatchSample> next_batch(std::size_t n) override;
  nlohmann::json state() const override;
  void restore(const nlohmann::json& state) override;

  std::size_t size() const { return patches_.size(); }

 private:
  void reshuffle();

  std::vector<PatchSample> patches_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

// ---------------------------------------------------------------------------
// Dataset statistics

inline constexpr int kBrightnessBins = 32;

struct DatasetStatsEntry {
  std::string id;
  std::size_t samples = 0;
  double proportion = 0;
  std::size_t images = 0;
  std::size_t unreadable = 0;
  std::array<std::size_t, kBrightnessBins> histogram{};
};

struct DatasetStats {
  std::vector<DatasetStatsEntry> datasets;
};

struct StatsInput {
  std::string id;
  std::vector<std::filesystem::path> images;
  /// Instance count used for proportions; 0 uses the image count.
  std::size_t samples = 0;
};

/// floor(v * bins), with 1.0 in the last bin.
int brightness_bin(double mean_brightness);

DatasetStats compute_stats(const std::vector<StatsInput>& inputs);

/// A dataset argument is either a manifest (.json, instance counts from
/// annotations) or an image directory.
StatsInput stats_input_from_path(const std::filesystem::path& path, const AnnotationOptions& options = {});

nlohmann::json stats_to_json(const DatasetStats& stats);

}  // namespace zerolight
