#include "support.hpp"
#include "zerolight/config.hpp"
#include "zerolight/errors.hpp"
#include "zerolight/stub_encoder.hpp"
#include "zerolight/training.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

using namespace zerolight;
using namespace zerolight::testing;

namespace {

std::vector<PatchSample> dark_patches(int n, int side, std::uint64_t seed = 0) {
  const std::vector<std::string> labels{"car", "person", "dog"};
  std::vector<PatchSample> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({synthetic_scene(side, side, seed + i), labels[i % labels.size()], "synthetic", std::to_string(i),
                   "synthetic/" + std::to_string(i) + "#0"});
  }
  return out;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.patch_size = 16;
  cfg.steps = 20;
  cfg.lr = 1e-3;
  cfg.channel_width = 8;
  cfg.n_iterations = 4;
  cfg.checkpoint_every = 10;
  cfg.exposure.patch_size = 4;
  cfg.spatial.region_size = 4;
  cfg.weights.lambda_cls = 0;
  cfg.weights.lambda_prompt = 0;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("total loss is the weighted sum of its breakdown") {
  const auto batch = dark_patches(3, 16);
  const auto net = CurveNetworkf::random({4, 8}, 1);
  const auto enc = std::make_shared<StubEncoder<float>>();
  TextEmbeddingCache<float> cache;
  const auto prompts = embed_prompts(init_prompts<float>(4, enc->token_width(), 2), *enc);
  LossContext ctx;
  ctx.encoder = enc.get();
  ctx.text_cache = &cache;
  ctx.prompts = &prompts;
  ctx.exposure.patch_size = 4;
  ctx.spatial.region_size = 4;

  LossWeights w;
  const auto full = total_loss(batch, net, w, ctx, false);
  REQUIRE(full.breakdown.cls.has_value());
  REQUIRE(full.breakdown.prompt.has_value());
  const auto& b = full.breakdown;
  const double expected = 10 * b.exp + b.spa + 5 * b.rgb + 200 * b.tv + *b.cls + *b.prompt;
  CHECK(full.total == doctest::Approx(expected).epsilon(1e-12));

  LossWeights doubled = w;
  doubled.lambda_exp *= 2;
  CHECK(total_loss(batch, net, doubled, ctx, false).total == doctest::Approx(full.total + 10 * b.exp).epsilon(1e-9));

  ctx.workers = 3;
  const auto threaded = total_loss(batch, net, w, ctx, true);
  ctx.workers = 1;
  const auto serial = total_loss(batch, net, w, ctx, true);
  CHECK(threaded.total == serial.total);
  CHECK((threaded.grad.array() == serial.grad.array()).all());
}

TEST_CASE("disabled semantic terms are not evaluated") {
  const auto batch = dark_patches(2, 16);
  const auto net = CurveNetworkf::random({4, 8}, 1);
  LossContext ctx;
  ctx.exposure.patch_size = 4;
  ctx.spatial.region_size = 4;
  const auto out = total_loss(batch, net, apply_ablation({}, "baseline"), ctx, true);
  CHECK(!out.breakdown.cls.has_value());
  CHECK(!out.breakdown.prompt.has_value());
  CHECK(out.breakdown.exp > 0);

  LossWeights zero{0, 0, 0, 0, 0, 0};
  const auto z = total_loss(batch, net, zero, ctx, true);
  CHECK(z.total == 0);
  CHECK(z.breakdown.exp > 0);
  CHECK(z.grad.isZero(0));

  CHECK_THROWS_AS(total_loss(batch, net, LossWeights{}, ctx, true), InvalidState);
  CHECK_THROWS_AS(total_loss({}, net, zero, ctx, true), std::invalid_argument);
}

TEST_CASE("all-zero weights leave the network unchanged") {
  auto cfg = small_config();
  cfg.weights = {0, 0, 0, 0, 0, 0};
  cfg.weight_decay = 0;
  cfg.steps = 5;
  FixedPatchSource src(dark_patches(4, 16), 1);
  TempDir dir;
  Trainer t(cfg, src, dir.path());
  const Eigen::VectorXf before = t.network().parameters();
  t.run();
  CHECK((t.network().parameters().array() == before.array()).all());
}

TEST_CASE("ablation presets") {
  const LossWeights base;
  const auto b = apply_ablation(base, "baseline");
  CHECK(b.lambda_cls == 0);
  CHECK(b.lambda_prompt == 0);
  CHECK(b.lambda_exp == base.lambda_exp);
  const auto c = apply_ablation(base, "cls");
  CHECK(c.lambda_cls == 1);
  CHECK(c.lambda_prompt == 0);
  const auto p = apply_ablation(base, "prompt");
  CHECK(p.lambda_cls == 0);
  CHECK(p.lambda_prompt == 1);
  const auto f = apply_ablation(base, "full");
  CHECK(f.lambda_cls == 1);
  CHECK(f.lambda_prompt == 1);
  CHECK_THROWS_AS(apply_ablation(base, "most"), ConfigError);
}

TEST_CASE("gradient clipping") {
  Eigen::VectorXf g(2);
  g << 0.03f, 0.04f;
  CHECK(clip_gradients(g, 0.1) == doctest::Approx(0.05));
  CHECK(g[0] == 0.03f);

  g << 0.6f, 0.8f;
  CHECK(clip_gradients(g, 0.1) == doctest::Approx(1.0));
  CHECK(g.norm() == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(g[0] / g[1] == doctest::Approx(0.75));

  Eigen::VectorXf z = Eigen::VectorXf::Zero(3);
  CHECK(clip_gradients(z, 0.1) == 0);
  CHECK(z.isZero(0));

  g << std::numeric_limits<float>::quiet_NaN(), 1.f;
  CHECK_THROWS_AS(clip_gradients(g, 0.1), InvalidState);
  g << std::numeric_limits<float>::infinity(), 1.f;
  CHECK_THROWS_AS(clip_gradients(g, 0.1), InvalidState);
}

TEST_CASE("adam step") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam<double> adam(cfg, 2);
  Eigen::VectorXd p(2), g(2);
  p << 1, -1;
  g << 0.5, -2;
  adam.step(p, g);
  // the first bias-corrected step moves each coordinate by lr against its sign
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-0.9).epsilon(1e-6));

  cfg.weight_decay = 0.5;
  Adam<double> wd(cfg, 1);
  Eigen::VectorXd q(1), zero = Eigen::VectorXd::Zero(1);
  q << 2;
  wd.step(q, zero);
  CHECK(q[0] < 2);
}

TEST_CASE("smoke training lowers the loss") {
  auto cfg = small_config();
  cfg.steps = 200;
  cfg.checkpoint_every = 100;
  FixedPatchSource src(dark_patches(16, 16), 3);
  TempDir dir;
  Trainer t(cfg, src, dir.path());
  std::vector<double> totals;
  t.run([&](const StepRecord& r) {
    CHECK(r.grad_norm >= 0);
    totals.push_back(r.total);
  });
  REQUIRE(totals.size() == 200);
  const double first = std::accumulate(totals.begin(), totals.begin() + 20, 0.0) / 20;
  const double last = std::accumulate(totals.end() - 20, totals.end(), 0.0) / 20;
  CHECK(last < first);

  CHECK(std::filesystem::exists(t.model_path()));
  CHECK(std::filesystem::exists(t.checkpoint_dir() / "step_000000200.safetensors"));
  CHECK(std::filesystem::exists(t.checkpoint_dir() / "best.safetensors"));
  std::ifstream csv(t.loss_csv_path());
  std::string header, row;
  std::getline(csv, header);
  CHECK(header == "step,total,exp,spa,rgb,tv,cls,prompt");
  std::getline(csv, row);
  CHECK(row.rfind("1,", 0) == 0);
  CHECK(row.substr(row.size() - 2) == ",,");
}

TEST_CASE("keep_last bounds the number of step checkpoints") {
  auto cfg = small_config();
  cfg.steps = 10;
  cfg.checkpoint_every = 2;
  cfg.keep_last = 2;
  FixedPatchSource src(dark_patches(4, 16), 3);
  TempDir dir;
  Trainer t(cfg, src, dir.path());
  t.run();
  int steps = 0;
  for (const auto& e : std::filesystem::directory_iterator(t.checkpoint_dir())) {
    const auto name = e.path().filename().string();
    if (name.rfind("step_", 0) == 0 && e.path().extension() == ".safetensors") ++steps;
  }
  CHECK(steps == 2);
}

TEST_CASE("resumed training is bitwise identical") {
  auto cfg = small_config();
  cfg.steps = 20;
  cfg.checkpoint_every = 10;
  cfg.keep_last = 5;
  const auto patches = dark_patches(6, 16);

  TempDir a;
  FixedPatchSource sa(patches, 5);
  Trainer ta(cfg, sa, a.path());
  ta.run();

  TempDir b;
  {
    FixedPatchSource sb(patches, 5);
    auto partial = cfg;
    partial.steps = 13;
    Trainer tb(partial, sb, b.path());
    tb.run();
  }
  FixedPatchSource sc(patches, 5);
  Trainer tc(cfg, sc, b.path());
  tc.resume(b / "checkpoints/step_000000010.safetensors");
  CHECK(tc.current_step() == 10);
  tc.run();

  CHECK((tc.network().parameters().array() == ta.network().parameters().array()).all());
  CHECK(slurp(a / "loss.csv") == slurp(b / "loss.csv"));
  CHECK(slurp(a / "model.safetensors") == slurp(b / "model.safetensors"));
}

TEST_CASE("two identical runs write identical files") {
  auto cfg = small_config();
  const auto patches = dark_patches(6, 16);
  TempDir a, b;
  FixedPatchSource sa(patches, 8), sb(patches, 8);
  Trainer(cfg, sa, a.path()).run();
  Trainer(cfg, sb, b.path()).run();
  CHECK(slurp(a / "loss.csv") == slurp(b / "loss.csv"));
  CHECK(slurp(a / "model.safetensors") == slurp(b / "model.safetensors"));
  CHECK(slurp(a / "checkpoints/step_000000010.safetensors") == slurp(b / "checkpoints/step_000000010.safetensors"));
}

TEST_CASE("non-finite losses stop training with the batch ids") {
  auto cfg = small_config();
  auto patches = dark_patches(4, 16);
  patches[2].patch(0, 3, 3) = std::numeric_limits<float>::quiet_NaN();
  FixedPatchSource src(patches, 1);
  TempDir dir;
  Trainer t(cfg, src, dir.path());
  try {
    t.run();
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(std::find(e.batch_ids().begin(), e.batch_ids().end(), patches[2].sample_id) != e.batch_ids().end());
  } catch (const std::invalid_argument&) {
    // input validation rejecting the patch is also acceptable
  }
}

TEST_CASE("semantic terms require their inputs") {
  auto cfg = small_config();
  cfg.weights.lambda_cls = 1;
  FixedPatchSource src(dark_patches(4, 16), 1);
  TempDir dir;
  CHECK_THROWS_AS(Trainer(cfg, src, dir.path()), ConfigError);
  cfg.weights.lambda_cls = 0;
  cfg.weights.lambda_prompt = 1;
  CHECK_THROWS_AS(Trainer(cfg, src, dir.path(), std::make_shared<StubEncoder<float>>()), ConfigError);
  CHECK_THROWS_AS(Trainer(cfg, src, dir.path(), std::make_shared<StubEncoder<float>>(), init_prompts<float>(4, 7, 1)),
                  ConfigError);
}

TEST_CASE("training config from toml") {
  const auto j = parse_toml(R"(
# smoke settings
steps = 500
batch_size = 8
lr = 1e-4
seed = 7

[weights]
lambda_exp = 10.0
lambda_cls = 0
lambda_prompt = 0.5

[exposure]
patch_size = 8
target = 0.6
)");
  const auto cfg = train_config_from_json(j);
  CHECK(cfg.steps == 500);
  CHECK(cfg.batch_size == 8);
  CHECK(cfg.lr == 1e-4);
  CHECK(cfg.seed == 7);
  CHECK(cfg.weights.lambda_cls == 0);
  CHECK(cfg.weights.lambda_prompt == 0.5);
  CHECK(cfg.weights.lambda_tv == 200);
  CHECK(cfg.exposure.patch_size == 8);

  CHECK(train_config_from_json(to_json(cfg)).steps == 500);
  CHECK_THROWS_AS(train_config_from_json(parse_toml("stpes = 3")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(parse_toml("[weights]\nlambda_foo = 1")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(parse_toml("steps = \"many\"")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(parse_toml("lr = -1")).validate(), ConfigError);
}

TEST_CASE("toml subset parser") {
  const auto j = parse_toml(R"(
title = "run"   # trailing comment
literal = 'C:\path'
ints = [1, 2,
        3]
flag = true
neg = -2.5e-1
big = inf
[a.b]
"quoted key" = 1
c.d = { e = 2, f = [true, false] }
)");
  CHECK(j.at("title") == "run");
  CHECK(j.at("literal") == "C:\\path");
  CHECK(j.at("ints") == nlohmann::json::array({1, 2, 3}));
  CHECK(j.at("flag") == true);
  CHECK(j.at("neg").get<double>() == -0.25);
  CHECK(std::isinf(j.at("big").get<double>()));
  CHECK(j.at("a").at("b").at("quoted key") == 1);
  CHECK(j.at("a").at("b").at("c").at("d").at("e") == 2);

  try {
    parse_toml("a = 1\nb = \n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_toml("a = 1\na = 2"), ParseError);
  CHECK_THROWS_AS(parse_toml("[t]\n[t]"), ParseError);
}
