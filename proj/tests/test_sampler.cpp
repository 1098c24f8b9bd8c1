#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rsedit/sampler.hpp"
#include "support.hpp"

using namespace rsedit;
using Catch::Approx;

namespace {

// Captures the clean estimate handed to the hook.
struct EstimateProbe : SamplerHook {
  Image<float> last;
  int calls = 0;
  void on_clean_estimate(Image<float>& estimate, const Image<float>*, const StepContext&) override {
    last = estimate;
    ++calls;
  }
};

float max_abs_diff(const Image<float>& a, const Image<float>& b) {
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace

TEST_CASE("reblend then deblend is the identity", "[sampler]") {
  // Pixel-range images; float rounding of the blend is amplified by 1 / (1 - gamma).
  const auto clean = test::pattern_image({9, 11});
  const auto blurry = test::pattern_image({9, 11}, 1.3);
  for (double gamma : {0.0, 0.1, 0.5, 0.9, 0.99}) {
    const auto back = deblend(reblend(clean, blurry, gamma), blurry, gamma);
    INFO("gamma " << gamma);
    CHECK(max_abs_diff(back, clean) <= 1e-6 * std::max(1.0, 0.1 / (1.0 - gamma)));
  }
  const auto zero = reblend(clean, blurry, 0.0);
  CHECK(zero == clean);
  const auto one = reblend(clean, blurry, 1.0);
  CHECK(one == blurry);
}

TEST_CASE("deblend guards gamma near one", "[sampler]") {
  const auto mixed = test::random_image<float>({5, 5}, 3, 3);
  const auto blurry = test::random_image<float>({5, 5}, 3, 4);
  const auto out = deblend(mixed, blurry, 1.0);
  CHECK(out == mixed);
  CHECK(all_finite(deblend(mixed, blurry, kDeblendGuard - 1e-9)));
  CHECK_THROWS_AS(deblend(mixed, test::random_image<float>({5, 4}, 3, 4), 0.5), InvalidInput);
}

TEST_CASE("oracle noise recovers the clean image", "[sampler]") {
  const auto schedule = DiffusionSchedule::make(ScheduleConfig{}, 3);
  const auto clean = test::pattern_image({12, 14});
  const auto blurry = test::pattern_image({12, 14}, 0.7);
  for (int s : {0, 2}) {
    for (int t : {1, 17, 60}) {
      if (t > schedule.steps(s)) continue;
      const auto eps = test::random_image<float>(clean.dims(), 3, 10 + t);
      const auto& anchor = s == 0 ? clean : blurry;
      SamplerState state;
      state.scale = s;
      state.timestep = t;
      state.blurry = anchor;
      state.noisy = forward_sample(clean, anchor, t, s, eps, schedule);
      EstimateProbe probe;
      Rng rng(5);
      reverse_step_with_prediction(state, eps, schedule, rng, &probe);
      INFO("s " << s << " t " << t);
      REQUIRE(probe.calls == 1);
      CHECK(max_abs_diff(probe.last, clean) <= 1e-5f);
      CHECK(max_abs_diff(state.clean_estimate, clean) <= 1e-5f);
      CHECK(state.timestep == t - 1);
    }
  }
}

TEST_CASE("zero sigma steps are deterministic", "[sampler]") {
  const auto schedule = DiffusionSchedule::make(ScheduleConfig{}, 1);
  const auto x = test::random_image<float>({8, 8}, 3, 1);
  const auto eps = test::random_image<float>({8, 8}, 3, 2);
  auto run = [&](std::uint64_t seed) {
    SamplerState state;
    state.timestep = 40;
    state.blurry = Image<float>({8, 8}, 3);
    state.noisy = x;
    Rng rng(seed);
    reverse_step_with_prediction(state, eps, schedule, rng);
    return state.noisy;
  };
  CHECK(run(1) == run(1));
  CHECK(run(1) == run(2));
}

TEST_CASE("a single-step scale lands on the clean estimate", "[sampler]") {
  const auto schedule = DiffusionSchedule::from_betas({0.3}, 1);
  REQUIRE(schedule.steps(0) == 1);
  SamplerState state;
  state.timestep = 1;
  state.noisy = test::random_image<float>({6, 7}, 3, 8);
  state.blurry = Image<float>({6, 7}, 3);
  EstimateProbe probe;
  Rng rng(1);
  reverse_step_with_prediction(state, test::random_image<float>({6, 7}, 3, 9), schedule, rng, &probe);
  CHECK(state.timestep == 0);
  CHECK(max_abs_diff(state.noisy, probe.last) <= 1e-6f);
  SamplerState done = state;
  CHECK_THROWS_AS(reverse_step_with_prediction(done, probe.last, schedule, rng), InvalidInput);
}

TEST_CASE("ascending a scale", "[sampler]") {
  const auto finished = test::pattern_image({18, 15});
  const Dims next{24, 20};

  SECTION("noiseless limit") {
    const auto schedule = DiffusionSchedule::from_betas({1e-12, 1e-12}, 2, 1);
    Rng rng(3);
    const auto state = ascend_scale(finished, next, 1, schedule, rng);
    CHECK(state.noisy.dims() == next);
    CHECK(state.timestep == 1);
    CHECK(max_abs_diff(state.noisy, resample(finished, next)) <= 1e-5f);
    CHECK(state.blurry == resample(finished, next));
  }

  SECTION("matches the closed form") {
    const auto schedule = DiffusionSchedule::make(ScheduleConfig{}, 3);
    Rng rng(11), replica(11);
    const auto state = ascend_scale(finished, next, 2, schedule, rng);
    const auto noise = replica.normal_image<float>(next, 3);
    const double ab = schedule.alpha_bar(schedule.steps(2));
    const auto up = resample(finished, next);
    for (std::size_t i = 0; i < up.size(); ++i) {
      CHECK(state.noisy.data()[i] ==
            Approx(std::sqrt(ab) * up.data()[i] + std::sqrt(1 - ab) * noise.data()[i]).margin(1e-6));
    }
  }

  SECTION("noise variance") {
    const auto schedule = DiffusionSchedule::make(ScheduleConfig{}, 2);
    const double ab = schedule.alpha_bar(schedule.steps(1));
    const Dims small{4, 4};
    const auto tiny = test::pattern_image({3, 3});
    const auto up = resample(tiny, small);
    Rng rng(12);
    const int draws = 10000;
    std::vector<double> sum(up.size(), 0.0), sum_sq(up.size(), 0.0);
    for (int k = 0; k < draws; ++k) {
      const auto state = ascend_scale(tiny, small, 1, schedule, rng);
      for (std::size_t i = 0; i < up.size(); ++i) {
        const double v = state.noisy.data()[i] - std::sqrt(ab) * up.data()[i];
        sum[i] += v;
        sum_sq[i] += v * v;
      }
    }
    const double expected = 1.0 - ab;
    double pooled = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double mean = sum[i] / draws;
      const double var = sum_sq[i] / draws - mean * mean;
      pooled += var;
      CHECK(std::abs(var - expected) < 4.0 * expected * std::sqrt(2.0 / draws));
    }
    pooled /= up.size();
    CHECK(std::abs(pooled - expected) < 3.0 * expected * std::sqrt(2.0 / (draws * up.size())));
  }

  SECTION("bad target scale") {
    const auto schedule = DiffusionSchedule::make(ScheduleConfig{}, 2);
    Rng rng(1);
    CHECK_THROWS_AS(ascend_scale(finished, next, 0, schedule, rng), InvalidInput);
    CHECK_THROWS_AS(ascend_scale(finished, next, 2, schedule, rng), InvalidInput);
  }
}

TEST_CASE("full pass shape, range and determinism", "[sampler]") {
  const auto model = test::toy_model();
  REQUIRE(model.num_scales() == 2);
  std::vector<double> fractions;
  const auto a = sample(model, 7, nullptr, [&](double f) { fractions.push_back(f); });
  const auto b = sample(model, 7);
  const auto c = sample(model, 8);
  CHECK(a.dims() == model.source.scales.back().dims());
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (float v : a.data()) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  REQUIRE(fractions.size() == static_cast<std::size_t>(model.schedule.steps(0) + model.schedule.steps(1)));
  CHECK(fractions.back() == 1.0);
  CHECK(std::is_sorted(fractions.begin(), fractions.end()));
}

TEST_CASE("an identity hook changes nothing", "[sampler]") {
  const auto model = test::toy_model(3);
  SamplerHook identity;
  EstimateProbe probe;
  const auto plain = sample(model, 21);
  CHECK(sample(model, 21, &identity) == plain);
  CHECK(sample(model, 21, &probe) == plain);
  CHECK(probe.calls == model.schedule.steps(0) + model.schedule.steps(1));
}

TEST_CASE("hook sees the previous estimate within a scale", "[sampler]") {
  struct PreviousProbe : SamplerHook {
    std::vector<std::pair<int, bool>> seen;
    void on_clean_estimate(Image<float>&, const Image<float>* previous, const StepContext& ctx) override {
      seen.emplace_back(ctx.timestep, previous != nullptr);
    }
  } probe;
  const auto model = test::toy_model();
  sample(model, 1, &probe);
  const int t0 = model.schedule.steps(0);
  REQUIRE(probe.seen.size() == static_cast<std::size_t>(t0 + model.schedule.steps(1)));
  CHECK(probe.seen[0] == std::pair{t0, false});
  CHECK(probe.seen[1] == std::pair{t0 - 1, true});
  CHECK(probe.seen[t0] == std::pair{model.schedule.steps(1), false});
}

TEST_CASE("non-finite guided estimates are reported", "[sampler]") {
  struct Poison : SamplerHook {
    void on_clean_estimate(Image<float>& e, const Image<float>*, const StepContext&) override {
      e.at(0, 0, 0) = std::numeric_limits<float>::infinity();
    }
  } poison;
  CHECK_THROWS_AS(sample(test::toy_model(), 1, &poison), GuidanceError);
}

TEST_CASE("checkpoint pyramid metadata must match", "[sampler]") {
  Checkpoint ck;
  ck.model.denoiser.num_blocks = 1;
  ck.model.denoiser.channels = 4;
  ck.model.denoiser.embed_dim = 8;
  ck.source = test::pattern_image({30, 30});
  ck.parameters.assign(Denoiser<float>(ck.model.denoiser).parameter_count(), 0.0f);
  ck.pyramid.dims = build_pyramid(ck.source, ck.model.pyramid).all_dims();
  CHECK_NOTHROW(DiffusionModel::from_checkpoint(ck));
  ck.pyramid.dims.pop_back();
  CHECK_THROWS_AS(DiffusionModel::from_checkpoint(ck), ParseError);
}
