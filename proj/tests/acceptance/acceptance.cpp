// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any fails.

#include "support.hpp"
#include "zerolight/cli.hpp"
#include "zerolight/curve.hpp"
#include "zerolight/losses.hpp"
#include "zerolight/prompt_prior.hpp"
#include "zerolight/semantic_guidance.hpp"
#include "zerolight/stub_encoder.hpp"
#include "zerolight/training.hpp"
#include "zerolight/image_io.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

using namespace zerolight;
using namespace zerolight::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "; failed: ";
      else detail << ", ";
      detail << what;
      pass = false;
    }
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------

void curve_math(Outcome& o) {
  const auto t0 = Clock::now();
  long violations = 0;
  auto step = [](double x, double a) {
    Imaged img = Imaged::constant(1, 1, x);
    Planar<double> alpha = Planar<double>::Constant(3, 1, a);
    return apply_curve_step(img, alpha)(0, 0, 0);
  };
  auto check = [&](double x, double a, double dx, double da) {
    const double y = step(x, a);
    if (y < 0 || y > 1) ++violations;
    if (step(std::min(x + dx, 1.0), a) < y - 1e-15) ++violations;
    if (step(x, std::min(a + da, 1.0)) < y - 1e-15) ++violations;
    if (step(x, 0) != x) ++violations;
  };
  for (int i = 0; i <= 10; ++i) {
    for (int j = -10; j <= 10; ++j) check(i / 10.0, j / 10.0, 0.1, 0.1);
  }
  for (int j = -10; j <= 10; ++j) {
    if (step(0, j / 10.0) != 0 || step(1, j / 10.0) != 1) ++violations;
  }
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ux(0, 1), ua(-1, 1), ud(0, 0.05);
  for (int k = 0; k < 100000; ++k) check(ux(rng), ua(rng), ud(rng), ud(rng));

  // the eight-step curve keeps the same properties per pixel
  CurveMapsd maps = random_maps<double>(8, 16, 16, 2, 1.0);
  const Imaged x = random_image<double>(16, 16, 3, 0, 1);
  const Imaged y = apply_curve(x, maps);
  if ((y.planes() < 0).any() || (y.planes() > 1).any()) ++violations;

  const double dt = seconds_since(t0);
  o.detail << violations << " violations in " << dt << " s";
  o.require(violations == 0, "property violations");
  o.require(dt < 10, "runtime");
}

void golden_values(Outcome& o) {
  const auto t0 = Clock::now();
  int checked = 0;
  auto near = [&](double got, double want, double tol, const std::string& name) {
    ++checked;
    o.require(std::abs(got - want) <= tol, name);
  };

  near(exposure_loss(Imaged::constant(16, 16, 0.6)), 0.0, 1e-6, "exposure at target");
  near(exposure_loss(Imaged::constant(32, 32, 0.2)), 0.4, 1e-6, "exposure 0.2");
  Imaged two(16, 32);
  two.planes().setConstant(0.6);
  for (int c = 0; c < 3; ++c)
    for (int yy = 0; yy < 16; ++yy)
      for (int xx = 16; xx < 32; ++xx) two(c, yy, xx) = 1.0;
  near(exposure_loss(two), 0.2, 1e-6, "exposure two patches");

  const Imaged r = random_image<double>(12, 16, 2);
  near(spatial_consistency_loss(r, r), 0.0, 1e-6, "spatial identity");
  Imaged flat = Imaged::constant(8, 8, 0.3), bright = flat;
  bright.planes() *= 2.5;
  near(spatial_consistency_loss(bright, flat), 0.0, 1e-6, "spatial uniform scale");
  Imaged in(4, 8), enh = Imaged::constant(4, 8, 0.2);
  for (int c = 0; c < 3; ++c)
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 8; ++xx) in(c, yy, xx) = xx < 4 ? 0.2 : 0.6;
  near(spatial_consistency_loss(enh, in), 0.16, 1e-6, "spatial step edge");

  near(color_constancy_loss(Imaged::constant(5, 5, 0.37)), 0.0, 1e-6, "color gray");
  near(color_constancy_loss(Imaged::constant(3, 4, 0.5, 0.4, 0.3)), 0.06, 1e-6, "color tinted");

  CurveMapsd constant(8, 5, 6);
  constant.alpha().setConstant(0.3);
  near(illumination_smoothness_loss(constant), 0.0, 1e-6, "tv constant");
  CurveMapsd pair(1, 1, 2);
  pair.alpha()(0, 1) = 1.0;
  near(illumination_smoothness_loss(pair), 0.5, 1e-6, "tv pair");

  // encoder-dependent examples
  const ConstantEncoder<double> flat_enc;
  const auto prompts = init_prompts<double>(4, flat_enc.token_width(), 1);
  near(prompt_init_loss(make_sample_pair(random_image<double>(8, 8, 6)), prompts, flat_enc), 2 * std::log(2.0), 1e-4,
       "stage-1 uninformative");
  near(prior_loss(random_image<double>(8, 8, 1), prompts, flat_enc), std::log(2.0), 1e-4, "prior uninformative");
  TextEmbeddingCache<double> cache;
  near(semantic_loss(random_image<double>(8, 8, 1), ClassLabel("car"), flat_enc, cache), std::log(2.0), 1e-4,
       "semantic uninformative");

  Vector<double> e(3), ne(3);
  e << 0, 0, 1;
  ne = -e;
  near(prior_loss_on_embedding<double>(e, {e, ne}).value, 0.12692801104297263, 1e-6, "prior aligned");
  near(semantic_loss_on_embedding<double>(e, {e, ne}).value, 0.12692801104297263, 1e-6, "semantic aligned");
  near(softplus(-std::log(9.0)), 0.1053605156578263, 1e-6, "confident negative");

  const StubEncoder<double> stub;
  near(binary_similarity(stub.encode_image(random_image<double>(32, 32, 4)).embedding, stub.encode_text("a"),
                         stub.encode_text("a")),
       0.5, 1e-4, "equal prompts");
  const auto antonyms = build_antonym_pair(ClassLabel("Car"));
  ++checked;
  o.require(antonyms.positive == "a photo of a car" && antonyms.negative == "not a photo of a car", "antonym text");

  const double dt = seconds_since(t0);
  o.detail << checked << " examples in " << dt << " s";
  o.require(dt < 60, "runtime");
}

void gradient_checks(Outcome& o) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  auto pick = [&](Eigen::Index n) { return std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng); };
  std::map<std::string, double> worst;
  auto record = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };

  Imaged x = random_image<double>(32, 48, 21);
  const auto ge = exposure_loss_grad(x);
  for (int t = 0; t < 100; ++t) {
    const auto i = pick(x.planes().size());
    record("exp", relative_error(ge.grad.planes().data()[i],
                                 central_difference(x.planes().data()[i], [&] { return exposure_loss(x); })));
  }
  Imaged e = random_image<double>(16, 20, 22), in = random_image<double>(16, 20, 23);
  const auto gs = spatial_consistency_loss_grad(e, in);
  for (int t = 0; t < 100; ++t) {
    const auto i = pick(e.planes().size());
    record("spa", relative_error(gs.grad.enhanced.planes().data()[i],
                                 central_difference(e.planes().data()[i], [&] { return spatial_consistency_loss(e, in); })));
  }
  Imaged c = random_image<double>(9, 11, 24);
  const auto gc = color_constancy_loss_grad(c);
  for (int t = 0; t < 100; ++t) {
    const auto i = pick(c.planes().size());
    record("rgb", relative_error(gc.grad.planes().data()[i],
                                 central_difference(c.planes().data()[i], [&] { return color_constancy_loss(c); })));
  }
  CurveMapsd maps = random_maps<double>(4, 7, 9, 25);
  const auto gt = illumination_smoothness_loss_grad(maps);
  for (int t = 0; t < 100; ++t) {
    const auto i = pick(maps.alpha().size());
    record("tv", relative_error(gt.grad.alpha().data()[i], central_difference(maps.alpha().data()[i], [&] {
                                  return illumination_smoothness_loss(maps);
                                })));
  }

  const StubEncoder<double> enc;
  TextEmbeddingCache<double> cache;
  Imaged s = random_image<double>(40, 36, 6);
  const ClassLabel label("car");
  const auto gcls = semantic_loss_grad(s, label, enc, cache);
  for (int t = 0; t < 100; ++t) {
    const auto i = pick(s.planes().size());
    record("cls", relative_error(gcls.grad.planes().data()[i], central_difference(s.planes().data()[i], [&] {
                                   return semantic_loss(s, label, enc, cache);
                                 }), 1e-6));
  }
  const auto prompts = init_prompts<double>(4, enc.token_width(), 4, 0.5);
  Imaged p = random_image<double>(48, 48, 10);
  const auto gp = prior_loss_grad(p, prompts, enc);
  for (int t = 0; t < 100; ++t) {
    const auto i = pick(p.planes().size());
    record("prompt", relative_error(gp.grad.planes().data()[i],
                                    central_difference(p.planes().data()[i], [&] { return prior_loss(p, prompts, enc); }),
                                    1e-6));
  }

  for (const auto& [name, err] : worst) {
    const double tol = (name == "cls" || name == "prompt") ? 1e-2 : 1e-3;
    o.detail << name << " " << err << " ";
    o.require(err < tol, name);
  }
  const double dt = seconds_since(t0);
  o.detail << "in " << dt << " s";
  o.require(dt < 300, "runtime");
}

void noise_statistics(Outcome& o) {
  const double sigma = 0.05;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0, sigma);
  double sp = 0, sp2 = 0, sn = 0, sn2 = 0;
  long n = 0;
  for (int draw = 0; draw < 10000; ++draw) {
    Imaged img(4, 4);
    for (Eigen::Index i = 0; i < img.planes().size(); ++i) img.planes().data()[i] = 0.5 + noise(rng);
    const auto pair = make_sample_pair(img);
    for (int ch = 0; ch < 3; ++ch) {
      const double a = pair.positive(ch, 0, 0) - 0.5, b = pair.negative(ch, 0, 0) - 0.5;
      sp += a, sp2 += a * a, sn += b, sn2 += b * b;
      ++n;
    }
  }
  const double var_p = sp2 / n - (sp / n) * (sp / n);
  const double var_n = sn2 / n - (sn / n) * (sn / n);
  const double rn = var_n / (sigma * sigma), rp = var_p / (sigma * sigma / 16);
  o.detail << "subsampled/sigma^2 " << rn << ", pooled/(sigma^2/16) " << rp;
  o.require(std::abs(rn - 1) < 0.1, "subsampled variance");
  o.require(std::abs(rp - 1) < 0.1, "pooled variance");
}

/// Desk-scale stand-in for stage 1: the stub's text and prompt towers with
/// an image embedding built from one explicit feature, the log of the
/// neighbour-difference energy relative to a reference level, so pooled and
/// subsampled crops point to opposite sides of the reference direction.
/// The reference sits between the two levels of the noisy synthetic
/// captures below (about e^-7 pooled, e^-6 subsampled).
class SeparableEncoder final : public Encoder<float> {
 public:
  std::string variant() const override { return "separable-" + base_.variant(); }
  int embedding_dim() const override { return base_.embedding_dim(); }
  int token_width() const override { return base_.token_width(); }
  int max_prompt_tokens() const override { return base_.max_prompt_tokens(); }
  int input_resolution() const override { return base_.input_resolution(); }
  Vector<float> encode_text(std::string_view text) const override { return base_.encode_text(text); }
  PromptEncoding<float> encode_prompt(const TokenMatrix<float>& p) const override { return base_.encode_prompt(p); }
  std::uint64_t weights_checksum() const override { return base_.weights_checksum(); }

  ImageEncoding<float> encode_image(const Imagef& image) const override {
    validate_image(image, "SeparableEncoder");
    const int h = image.height(), w = image.width();
    double energy = 1e-8;
    long count = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (x + 1 < w) energy += std::pow(image(c, y, x + 1) - image(c, y, x), 2), ++count;
          if (y + 1 < h) energy += std::pow(image(c, y + 1, x) - image(c, y, x), 2), ++count;
        }
    energy /= static_cast<double>(std::max(count, 1L));
    const double f = kScale * (std::log(energy) - kLogReference);
    const double norm = std::sqrt(1 + f * f);
    Vector<float> e = Vector<float>::Zero(embedding_dim());
    e[0] = static_cast<float>(1 / norm);
    e[1] = static_cast<float>(f / norm);
    const Imagef input = image;
    auto backward = [input, f, norm, energy, count](const Vector<float>& g) {
      // d e0/df = -f / norm^3, d e1/df = 1 / norm^3
      const double df = (g[1] - f * g[0]) / (norm * norm * norm);
      const double dE = df * kScale / energy / static_cast<double>(std::max(count, 1L));
      const int hh = input.height(), ww = input.width();
      Imagef grad(hh, ww);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < hh; ++y)
          for (int x = 0; x < ww; ++x) {
            if (x + 1 < ww) {
              const float d = static_cast<float>(2 * dE * (input(c, y, x + 1) - input(c, y, x)));
              grad(c, y, x + 1) += d;
              grad(c, y, x) -= d;
            }
            if (y + 1 < hh) {
              const float d = static_cast<float>(2 * dE * (input(c, y + 1, x) - input(c, y, x)));
              grad(c, y + 1, x) += d;
              grad(c, y, x) -= d;
            }
          }
      return grad;
    };
    return {std::move(e), backward};
  }

 private:
  static constexpr double kScale = 1.0;
  static constexpr double kLogReference = -6.5;
  StubEncoder<float> base_;
};

/// Synthetic low-light capture: a dim scene plus Gaussian read noise.
Imagef noisy_scene(int h, int w, std::uint64_t seed, double sigma = 0.02) {
  Imagef img = synthetic_scene(h, w, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(sigma));
  for (Eigen::Index i = 0; i < img.planes().size(); ++i) {
    img.planes().data()[i] = std::clamp(img.planes().data()[i] + noise(rng), 0.0f, 1.0f);
  }
  return img;
}

void stage1_convergence(Outcome& o, const Encoder<float>& enc) {
  const auto t0 = Clock::now();
  const std::uint64_t checksum = enc.weights_checksum();
  std::vector<Imagef> train, held_out;
  for (int i = 0; i < 100; ++i) train.push_back(noisy_scene(96, 128, 1000 + i));
  for (int i = 0; i < 100; ++i) held_out.push_back(noisy_scene(96, 128, 5000 + i));

  PromptTrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_size = 8;
  cfg.prompt_length = 8;
  cfg.lr = 1e-2;
  cfg.seed = 1;
  const auto result = train_prompts(train, enc, cfg);

  std::vector<SamplePair<float>> pairs;
  std::mt19937_64 rng(99);
  const int crop = cfg.factor * enc.input_resolution();
  for (const auto& img : held_out) pairs.push_back(make_sample_pair(random_crop(img, crop, rng), cfg.factor));
  const double acc = discrimination_accuracy(pairs, result.prompts, enc);
  const double dt = seconds_since(t0);
  o.detail << "held-out accuracy " << acc << " after " << cfg.steps << " steps in " << dt << " s";
  o.require(acc > 0.9, "accuracy");
  o.require(dt < 120, "runtime");
  o.require(enc.weights_checksum() == checksum, "encoder changed");
}

std::vector<PatchSample> fixed_patches(int n, int side) {
  const std::vector<std::string> labels{"car", "person", "bicycle", "dog"};
  std::vector<PatchSample> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({synthetic_scene(side, side, 200 + i, 0.15 + 0.1 * (i % 3)), labels[i % labels.size()], "synthetic",
                   std::to_string(i), "synthetic/" + std::to_string(i) + "#0"});
  }
  return out;
}

TrainConfig smoke_config() {
  TrainConfig cfg;
  cfg.steps = 500;
  cfg.batch_size = 8;
  cfg.patch_size = 32;
  cfg.lr = 1e-3;
  cfg.checkpoint_every = 250;
  cfg.seed = 3;
  cfg.workers = 4;
  cfg.exposure.patch_size = 8;
  return cfg;
}

struct SmokeRun {
  std::vector<StepRecord> records;
  double seconds = 0;
};

SmokeRun smoke_run(const fs::path& dir, const std::shared_ptr<const Encoder<float>>& enc,
                   const LearnedPromptPair<float>& prompts) {
  const auto t0 = Clock::now();
  FixedPatchSource source(fixed_patches(64, 32), 7);
  Trainer trainer(smoke_config(), source, dir, enc, prompts);
  SmokeRun run;
  trainer.run([&](const StepRecord& r) { run.records.push_back(r); });
  run.seconds = seconds_since(t0);
  return run;
}

void stage2_smoke(Outcome& o, const SmokeRun& run) {
  auto mean = [&](std::size_t from, std::size_t to, auto field) {
    double s = 0;
    for (std::size_t i = from; i < to; ++i) s += field(run.records[i]);
    return s / static_cast<double>(to - from);
  };
  const std::size_t n = run.records.size();
  if (n != 500) {
    o.require(false, "step count");
    return;
  }
  auto total = [](const StepRecord& r) { return r.total; };
  auto exp = [](const StepRecord& r) { return r.breakdown.exp; };
  const double t_first = mean(0, 50, total), t_last = mean(n - 50, n, total);
  const double e_first = mean(0, 50, exp), e_last = mean(n - 50, n, exp);
  o.detail << "total " << t_first << " -> " << t_last << ", exposure " << e_first << " -> " << e_last << " in "
           << run.seconds << " s";
  o.require(t_last < t_first, "total did not decrease");
  o.require(e_last < e_first, "exposure did not decrease");
}

void write_dataset(const fs::path& dir) {
  fs::create_directories(dir / "images");
  nlohmann::json images = nlohmann::json::array(), anns = nlohmann::json::array();
  const std::vector<std::string> labels{"car", "person", "dog"};
  for (int i = 0; i < 6; ++i) {
    const std::string file = "images/" + std::to_string(i) + ".png";
    save_image(dir / file, synthetic_scene(48, 64, 300 + i));
    images.push_back({{"id", i}, {"file", file}, {"width", 64}, {"height", 48}});
    anns.push_back({{"image_id", i}, {"bbox", {4, 6, 30, 24}}, {"label", labels[i % 3]}});
  }
  std::ofstream(dir / "train.json") << nlohmann::json{{"images", images}, {"annotations", anns}}.dump();
}

void ablation_wiring(Outcome& o, const fs::path& root) {
  const auto t0 = Clock::now();
  write_dataset(root / "data");
  std::ostringstream sink;
  const std::vector<std::string> encoder{"--stub-resolution", "16"};
  std::vector<std::string> tp{"train-prompts", "--data", (root / "data/images").string(), "--out",
                              (root / "prompts.safetensors").string(), "--steps", "5", "--batch", "2",
                              "--prompt-length", "4"};
  tp.insert(tp.end(), encoder.begin(), encoder.end());
  if (run_cli(tp, sink, sink) != 0) {
    o.require(false, "train-prompts failed: " + sink.str());
    return;
  }
  const std::map<std::string, std::pair<bool, bool>> expected{
      {"baseline", {false, false}}, {"cls", {true, false}}, {"prompt", {false, true}}, {"full", {true, true}}};
  for (const auto& [name, terms] : expected) {
    std::vector<std::string> args{"train",        "--data",       (root / "data/train.json").string(),
                                  "--out-dir",    (root / name).string(),
                                  "--ablation",   name,
                                  "--prompts",    (root / "prompts.safetensors").string(),
                                  "--steps",      "3",
                                  "--batch",      "2",
                                  "--patch-size", "32",
                                  "--seed",       "1"};
    args.insert(args.end(), encoder.begin(), encoder.end());
    std::ostringstream out, err;
    if (run_cli(args, out, err) != 0) {
      o.require(false, name + " failed: " + err.str());
      continue;
    }
    std::ifstream csv(root / name / "loss.csv");
    std::string header, row;
    std::getline(csv, header);
    int rows = 0;
    bool ok = header == loss_csv_header();
    while (std::getline(csv, row)) {
      ++rows;
      std::vector<std::string> cols;
      std::stringstream ss(row);
      std::string cell;
      while (std::getline(ss, cell, ',')) cols.push_back(cell);
      while (cols.size() < 8) cols.emplace_back();
      for (int k = 2; k < 6; ++k) ok = ok && !cols[k].empty();
      ok = ok && (!cols[6].empty()) == terms.first && (!cols[7].empty()) == terms.second;
    }
    o.require(ok && rows == 3, name + " breakdown");
  }
  o.detail << "baseline, cls, prompt, full in " << seconds_since(t0) << " s";
}

void determinism(Outcome& o, const fs::path& a, const fs::path& b) {
  std::vector<std::string> files{"loss.csv", "model.safetensors", "model.safetensors.json"};
  for (const auto& e : fs::directory_iterator(a / "checkpoints")) {
    files.push_back("checkpoints/" + e.path().filename().string());
  }
  std::sort(files.begin(), files.end());
  int identical = 0;
  for (const auto& f : files) {
    const bool same = fs::exists(b / f) && slurp(a / f) == slurp(b / f);
    identical += same;
    o.require(same, f);
  }
  o.detail << identical << "/" << files.size() << " files byte-identical";
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number; default is all nine.
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  auto want = [&](int id) { return selected.empty() || selected.count(id) > 0; };

  TempDir root;
  std::vector<std::pair<std::string, bool>> results;
  auto report = [&](int id, const std::string& name, Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail.str()
              << std::endl;
    results.emplace_back(name, o.pass);
  };
  auto run = [&](int id, const std::string& name, const std::function<void(Outcome&)>& fn) {
    if (!want(id)) return;
    Outcome o;
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    report(id, name, o);
  };

  run(1, "curve math", curve_math);
  run(2, "loss golden values", golden_values);
  run(3, "gradient checks", gradient_checks);
  run(4, "sample-pair noise statistics", noise_statistics);
  run(5, "stage-1 convergence", [](Outcome& o) { stage1_convergence(o, SeparableEncoder()); });

  // Stages 1 and 2 with the stub encoder feed the smoke, determinism and
  // frozen-encoder checks.
  const auto encoder = std::make_shared<const StubEncoder<float>>();
  const std::uint64_t checksum_start = encoder->weights_checksum();
  std::optional<LearnedPromptPair<float>> prompts;
  std::uint64_t checksum_stage1 = 0;
  std::string pipeline_error;
  SmokeRun first;
  if (want(6) || want(8) || want(9)) {
    try {
      std::vector<Imagef> corpus;
      for (int i = 0; i < 8; ++i) corpus.push_back(noisy_scene(96, 128, 1000 + i));
      PromptTrainConfig cfg;
      cfg.steps = 50;
      cfg.prompt_length = 8;
      cfg.lr = 1e-2;
      prompts = train_prompts(corpus, *encoder, cfg).prompts;
      checksum_stage1 = encoder->weights_checksum();
      first = smoke_run(root / "smoke_a", encoder, *prompts);
    } catch (const std::exception& e) {
      pipeline_error = e.what();
    }
  }
  auto pipeline_ok = [&](Outcome& o) {
    if (!pipeline_error.empty()) o.require(false, "exception: " + pipeline_error);
    return pipeline_error.empty();
  };

  run(6, "stage-2 smoke training", [&](Outcome& o) {
    if (pipeline_ok(o)) stage2_smoke(o, first);
  });
  run(7, "ablation wiring", [&](Outcome& o) { ablation_wiring(o, root / "ablation"); });
  run(8, "determinism", [&](Outcome& o) {
    if (!pipeline_ok(o)) return;
    smoke_run(root / "smoke_b", encoder, *prompts);
    determinism(o, root / "smoke_a", root / "smoke_b");
  });
  run(9, "frozen encoder", [&](Outcome& o) {
    if (!pipeline_ok(o)) return;
    const std::uint64_t end = encoder->weights_checksum();
    o.detail << std::hex << "checksum " << checksum_start << " / " << checksum_stage1 << " / " << end;
    o.require(checksum_start == checksum_stage1 && checksum_stage1 == end, "checksum changed");
  });

  const bool all = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.second; });
  std::cout << (all ? "ALL PASS" : "SOME FAILED") << std::endl;
  return all ? 0 : 1;
}
