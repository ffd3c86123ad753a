#include "support.hpp"
#include "zerolight/data_pipeline.hpp"
#include "zerolight/errors.hpp"
#include "zerolight/image_io.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <set>

using namespace zerolight;
using namespace zerolight::testing;

namespace {

/// Writes n images of size h x w plus a manifest with `per_image` boxes each,
/// labelled from `labels` in turn. Returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, int n, int per_image,
                                    const std::vector<std::string>& labels, int h = 48, int w = 64) {
  std::filesystem::create_directories(dir / "img");
  nlohmann::json images = nlohmann::json::array(), anns = nlohmann::json::array();
  int k = 0;
  for (int i = 0; i < n; ++i) {
    const std::string file = "img/" + std::to_string(i) + ".png";
    save_image(dir / file, random_image<float>(h, w, 1000 + i, 0, 0.3));
    images.push_back({{"id", i}, {"file", file}, {"width", w}, {"height", h}});
    for (int j = 0; j < per_image; ++j, ++k) {
      anns.push_back({{"image_id", i}, {"bbox", {2 + j, 3, 20, 16}}, {"label", labels[k % labels.size()]}});
    }
  }
  const auto manifest = dir / "manifest.json";
  std::ofstream(manifest) << nlohmann::json{{"images", images}, {"annotations", anns}}.dump(1);
  return manifest;
}

}  // namespace

TEST_CASE("annotation parsing") {
  AnnotationOptions opts;
  opts.require_files = false;
  CHECK(parse_annotations(R"({"images": [], "annotations": []})", ".", opts).empty());

  const std::string doc = R"({
    "images": [{"id": "a", "file": "a.png", "width": 100, "height": 50},
               {"id": 7, "file": "b.png", "width": 10, "height": 10}],
    "annotations": [
      {"image_id": "a", "bbox": [90, 10, 30, 20], "label": " Car "},
      {"image_id": "a", "bbox": [0, 0, 5, 5], "label": "dog", "score": 0.25},
      {"image_id": "a", "bbox": [1, 1, 5, 5], "label": "dog", "score": 0.3},
      {"image_id": 7, "bbox": [20, 20, 4, 4], "label": "cat"}
    ]})";
  AnnotationReport report;
  const auto recs = parse_annotations(doc, "/data", opts, &report);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].image_path == std::filesystem::path("/data/a.png"));
  REQUIRE(recs[0].annotations.size() == 2);
  CHECK(recs[0].annotations[0].bbox.x == 90);
  CHECK(recs[0].annotations[0].bbox.w == 10);
  CHECK(recs[0].annotations[0].label.name() == "car");
  CHECK(recs[0].annotations[1].score == 0.3);
  CHECK(report.filtered_by_score == 1);
  CHECK(report.degenerate_boxes == 1);
  CHECK(report.empty_records == 1);

  // raising the threshold never adds samples
  std::size_t prev = SIZE_MAX;
  for (double t : {0.0, 0.2, 0.3, 0.5, 0.9}) {
    opts.min_score = t;
    std::size_t count = 0;
    for (const auto& r : parse_annotations(doc, "/data", opts)) count += r.annotations.size();
    CHECK(count <= prev);
    prev = count;
  }
}

TEST_CASE("annotation errors") {
  try {
    parse_annotations("{\n  \"images\": [\n    {\"id\": 1,, }\n  ]\n}", ".");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_annotations(R"({"images": [], "annotations": [{"image_id": 1, "bbox": [0,0,1,1], "label": "x"}]})",
                                    "."),
                  ParseError);
  CHECK_THROWS_AS(load_annotations("/nonexistent/manifest.json"), ConfigError);

  TempDir dir;
  write_dataset(dir.path(), 2, 1, {"car"});
  std::filesystem::remove(dir / "img/1.png");
  AnnotationReport report;
  const auto recs = load_annotations(dir / "manifest.json", {}, &report);
  CHECK(recs.size() == 1);
  CHECK(report.missing_images == 1);
}

TEST_CASE("patch windows") {
  const auto big = patch_window({100, 80, 224, 224}, 600, 800);
  CHECK(big.x0 == 100);
  CHECK(big.y0 == 80);
  CHECK(big.x1 == 324);
  CHECK(big.y1 == 304);

  const auto small = patch_window({300, 200, 10, 10}, 600, 800);
  CHECK(small.x1 - small.x0 >= 64);
  CHECK(small.y1 - small.y0 >= 64);
  CHECK((small.x0 + small.x1) / 2 == 305);
  CHECK((small.y0 + small.y1) / 2 == 205);

  const auto corner = patch_window({0, 0, 8, 6}, 100, 120);
  CHECK(corner.x0 == 0);
  CHECK(corner.y0 == 0);
  CHECK(corner.x1 == 64);
  CHECK(corner.y1 == 64);

  const auto wide = patch_window({10, 40, 100, 20}, 200, 300);
  CHECK(wide.x1 - wide.x0 == 100);
  CHECK(wide.y1 - wide.y0 == 100);

  CHECK_THROWS_AS(patch_window({500, 10, 10, 10}, 100, 100), std::invalid_argument);
  CHECK_THROWS_AS(patch_window({10, 10, 0, 10}, 100, 100), std::invalid_argument);
}

TEST_CASE("patch extraction") {
  const Imagef img = random_image<float>(300, 400, 1, 0, 1);
  const Imagef exact = extract_patch(img, {50, 40, 224, 224});
  REQUIRE(exact.height() == 224);
  for (int c = 0; c < 3; ++c) CHECK(exact(c, 17, 33) == img(c, 57, 83));

  for (const BBox& b : {BBox{0, 0, 5, 5}, BBox{395, 295, 5, 5}, BBox{100, 100, 30, 200}}) {
    const Imagef p = extract_patch(img, b, 32);
    CHECK(p.height() == 32);
    CHECK(p.width() == 32);
    CHECK((p.planes() >= 0.f).all());
    CHECK((p.planes() <= 1.f).all());
  }
}

TEST_CASE("mixture stream") {
  TempDir dir;
  const auto m1 = write_dataset(dir / "a", 10, 3, {"car", "person", "dog"});
  const auto m2 = write_dataset(dir / "b", 10, 3, {"car", "person", "dog"});
  AnnotationOptions opts;
  auto spec = [&](const std::filesystem::path& m, const std::string& id, double w) {
    return DatasetSpec{id, load_annotations(m, opts), w};
  };
  PatchOptions popts;
  popts.out_size = 16;

  SUBCASE("single dataset is a reshuffled epoch concatenation") {
    MixtureStream s({spec(m1, "a", 1)}, 3, popts);
    for (int epoch = 0; epoch < 3; ++epoch) {
      std::set<std::pair<std::size_t, std::size_t>> seen;
      for (int i = 0; i < 30; ++i) {
        const auto r = s.next_ref();
        seen.insert({r.record, r.annotation});
      }
      CHECK(seen.size() == 30);
    }
  }
  SUBCASE("equal weights split draws evenly") {
    MixtureStream s({spec(m1, "a", 1), spec(m2, "b", 1)}, 4, popts);
    int first = 0;
    std::map<std::size_t, int> labels_a, labels_b, labels_mix;
    for (int i = 0; i < 10000; ++i) {
      const auto r = s.next_ref();
      first += r.dataset == 0;
      labels_mix[(r.record * 3 + r.annotation) % 3]++;
    }
    CHECK(std::abs(first / 10000.0 - 0.5) < 0.02);

    // label distribution of the mixture against a single-dataset stream
    MixtureStream single({spec(m1, "a", 1)}, 5, popts);
    for (int i = 0; i < 10000; ++i) {
      const auto r = single.next_ref();
      labels_a[(r.record * 3 + r.annotation) % 3]++;
    }
    double chi2 = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double o1 = labels_mix[k], o2 = labels_a[k], e = (o1 + o2) / 2;
      chi2 += (o1 - e) * (o1 - e) / e + (o2 - e) * (o2 - e) / e;
    }
    CHECK(chi2 < 9.21);  // 2 dof, 1%
  }
  SUBCASE("default weights follow instance counts") {
    const auto m3 = write_dataset(dir / "c", 5, 2, {"bus"});
    MixtureStream s({spec(m1, "a", 0), spec(m3, "c", 0)}, 1, popts);
    CHECK(s.probabilities()[0] == doctest::Approx(0.75));
  }
  SUBCASE("deterministic and resumable") {
    MixtureStream a({spec(m1, "a", 1), spec(m2, "b", 2)}, 9, popts);
    MixtureStream b({spec(m1, "a", 1), spec(m2, "b", 2)}, 9, popts);
    const auto ba = a.next_batch(100), bb = b.next_batch(100);
    for (int i = 0; i < 100; ++i) {
      CHECK(ba[i].sample_id == bb[i].sample_id);
      CHECK(ba[i].patch == bb[i].patch);
      CHECK(ba[i].patch.height() == 16);
      CHECK(!ba[i].label.empty());
    }
    const auto state = a.state();
    const auto next = a.next_batch(20);
    MixtureStream c({spec(m1, "a", 1), spec(m2, "b", 2)}, 9, popts);
    c.restore(state);
    const auto again = c.next_batch(20);
    for (int i = 0; i < 20; ++i) CHECK(next[i].sample_id == again[i].sample_id);

    PatchOptions threaded = popts;
    threaded.workers = 3;
    MixtureStream t({spec(m1, "a", 1), spec(m2, "b", 2)}, 9, threaded);
    const auto bt = t.next_batch(100);
    for (int i = 0; i < 100; ++i) CHECK(bt[i].patch == ba[i].patch);
  }
  SUBCASE("empty manifests") {
    std::ofstream(dir / "empty.json") << R"({"images": [], "annotations": []})";
    CHECK_THROWS_AS(MixtureStream({spec(dir / "empty.json", "e", 1)}, 1, popts), ConfigError);
  }
}

TEST_CASE("fixed patch source") {
  std::vector<PatchSample> patches;
  for (int i = 0; i < 5; ++i) patches.push_back({random_image<float>(8, 8, i), "car", "d", std::to_string(i), std::to_string(i)});
  FixedPatchSource a(patches, 2), b(patches, 2);
  const auto x = a.next_batch(12);
  const auto y = b.next_batch(12);
  for (int i = 0; i < 12; ++i) CHECK(x[i].sample_id == y[i].sample_id);
  std::set<std::string> first_epoch;
  for (int i = 0; i < 5; ++i) first_epoch.insert(x[i].sample_id);
  CHECK(first_epoch.size() == 5);

  const auto st = a.state();
  const auto more = a.next_batch(7);
  FixedPatchSource c(patches, 2);
  c.restore(st);
  const auto same = c.next_batch(7);
  for (int i = 0; i < 7; ++i) CHECK(more[i].sample_id == same[i].sample_id);
}

TEST_CASE("dataset statistics") {
  TempDir dir;
  std::filesystem::create_directories(dir / "black");
  std::filesystem::create_directories(dir / "gray");
  for (int i = 0; i < 3; ++i) save_image(dir / ("black/" + std::to_string(i) + ".png"), Imagef::constant(8, 8, 0.f));
  for (int i = 0; i < 2; ++i) save_image(dir / ("gray/" + std::to_string(i) + ".png"), Imagef::constant(8, 8, 0.5f));
  std::ofstream(dir / "gray/broken.png") << "not an image";

  const auto one = compute_stats({stats_input_from_path(dir / "black")});
  CHECK(one.datasets[0].proportion == 1.0);
  CHECK(one.datasets[0].histogram[0] == 3);

  const auto two = compute_stats({stats_input_from_path(dir / "black"), stats_input_from_path(dir / "gray")});
  CHECK(two.datasets[1].histogram[static_cast<std::size_t>(brightness_bin(128 / 255.0))] == 2);
  CHECK(brightness_bin(0.5) == 16);
  CHECK(brightness_bin(1.0) == kBrightnessBins - 1);
  CHECK(two.datasets[1].unreadable == 1);
  CHECK(std::abs(two.datasets[0].proportion + two.datasets[1].proportion - 1) < 1e-9);
  CHECK(two.datasets[0].proportion == doctest::Approx(0.6));

  const auto manifest = write_dataset(dir / "ds", 4, 3, {"car"});
  const auto in = stats_input_from_path(manifest);
  CHECK(in.samples == 12);
  CHECK(in.images.size() == 4);
  const auto j = stats_to_json(compute_stats({in}));
  CHECK(j.at("datasets")[0].at("samples") == 12);
}
