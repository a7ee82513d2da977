#include "cdisco/evaluate.hpp"

#include <cstring>

#include "support.hpp"

using namespace cdisco;

namespace {

ConceptVector axis_concept(std::size_t d, std::size_t j) {
  ConceptVector c;
  c.direction.assign(d, 0.0);
  c.direction[j] = 1.0;
  c.source = {ConceptSource::Kind::kNeuron, j, 0};
  return c;
}

// Small trained conv model on stripes vs background.
struct Planted {
  nn::ConvModel model{8, 8, 1, {4}, 2, 21};
  nn::SyntheticImages data;

  Planted() {
    nn::SyntheticSpec spec;
    spec.height = 8;
    spec.width = 8;
    spec.patch = 5;
    spec.noise_std = 0.1;
    spec.classes = {{nn::Pattern::kHStripes}, {nn::Pattern::kNone}};
    data = nn::gen_images(spec, 60, 22);
    nn::train(model, data.batch, {.epochs = 15, .lr = 0.05, .batch_size = 8, .seed = 23});
  }
};

}  // namespace

TEST_CASE("first_step_reaching scans the degradation curve") {
  CHECK(first_step_reaching(std::vector<double>{0.3, 0.6, 0.85, 0.9, 0.95}, 0.8) == 3u);
  CHECK(first_step_reaching(std::vector<double>{0.9}, 0.8) == 1u);
  CHECK_FALSE(first_step_reaching(std::vector<double>{0.1, 0.2}, 0.8).has_value());
  CHECK(first_step_reaching(std::vector<double>{0.1, 0.8}, 0.8) == 2u);
}

TEST_CASE("occlude_pixels replaces exactly the masked quadrant") {
  std::mt19937_64 rng(1);
  const DenseTensor image({4, 4, 2}, test::normal_floats(32, rng));
  std::vector<bool> mask(16, false);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x) mask[y * 4 + x] = true;
  const Fill fill{Fill::Kind::kMean, {0.25, -1.0}};
  const DenseTensor out = occlude_pixels(image, mask, fill);
  for (std::size_t p = 0; p < 16; ++p)
    for (std::size_t c = 0; c < 2; ++c) {
      if (mask[p]) {
        CHECK(out[p * 2 + c] == static_cast<float>(c == 0 ? 0.25 : -1.0));
      } else {
        const float a = out[p * 2 + c], b = image[p * 2 + c];
        CHECK(std::memcmp(&a, &b, sizeof(float)) == 0);
      }
    }
  CHECK_CODE(occlude_pixels(image, std::vector<bool>(15), fill), ErrorCode::kShape);
}

TEST_CASE("occlude_concept: constant map fills the whole image") {
  ConceptMap map;
  map.values = DenseTensor({2, 2}, std::vector<float>(4, 3.0f));
  const DenseTensor image({4, 4, 1}, std::vector<float>(16, 0.9f));
  const DenseTensor out = occlude_concept(image, map, Fill{Fill::Kind::kZero, {}});
  for (float v : out.data()) CHECK(v == 0.0f);
}

TEST_CASE("occlude_concept: zero fill on a zero image is the identity") {
  ConceptMap map;
  map.values = DenseTensor({2, 2}, {1, 2, 3, 4});
  const DenseTensor image({4, 4, 3});
  CHECK(occlude_concept(image, map, Fill{Fill::Kind::kZero, {}}) == image);
}

TEST_CASE("fill values and parsing") {
  CHECK(Fill{Fill::Kind::kGray, {}}.value(3) == 0.5);
  CHECK(Fill{Fill::Kind::kZero, {}}.value(0) == 0.0);
  const Fill empty_mean{Fill::Kind::kMean, {}};
  CHECK_CODE(empty_mean.value(0), ErrorCode::kInvalidArgument);
  CHECK(parse_fill("mean") == Fill::Kind::kMean);
  CHECK_CODE(parse_fill("blue"), ErrorCode::kInvalidArgument);
  const DenseTensor imgs({2, 1, 1, 2}, {1, 10, 3, 20});
  CHECK(channel_means(imgs) == std::vector<double>{2.0, 15.0});
}

TEST_CASE("select_channels: basis vector and uniform vector") {
  CHECK(select_channels(axis_concept(10, 0).direction, 0.8) == std::vector<std::size_t>{0});
  // uniform: every channel sits at the threshold, the cap keeps the first ceil(0.2 d)
  CHECK(select_channels(std::vector<double>(10, 0.3), 0.8) == std::vector<std::size_t>{0, 1});
  CHECK(select_channels(std::vector<double>(7, 0.3), 0.8) == std::vector<std::size_t>{0, 1});
  CHECK(select_channels(std::vector<double>{0, 0, 0}, 0.5).empty());
  CHECK_CODE(select_channels(std::vector<double>{}, 0.5), ErrorCode::kInvalidArgument);
  CHECK_CODE(select_channels(std::vector<double>{1}, 1.5), ErrorCode::kInvalidArgument);
}

TEST_CASE("select_channels keeps the top components by magnitude") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> dist;
  std::vector<double> u(2048);
  for (auto& x : u) x = dist(rng);
  const auto picked = select_channels(u, 0.900390625);
  CHECK(picked.size() == 204);
  // oracle: the 204 largest |u_j|
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t j = 0; j < u.size(); ++j) order.push_back({-std::abs(u[j]), j});
  std::sort(order.begin(), order.end());
  std::vector<std::size_t> ref;
  for (std::size_t r = 0; r < 204; ++r) ref.push_back(order[r].second);
  std::sort(ref.begin(), ref.end());
  CHECK(picked == ref);
}

TEST_CASE("annihilate_weights zeroes the selected leading slices only") {
  std::mt19937_64 rng(3);
  const DenseTensor w({5, 3, 3, 2}, test::normal_floats(90, rng));
  const Annihilation a = annihilate_weights(w, axis_concept(5, 2).direction, 0.8);
  CHECK(a.channels == std::vector<std::size_t>{2});
  CHECK(a.zeroed == 18);
  for (std::size_t i = 0; i < 90; ++i) CHECK(a.weights[i] == (i / 18 == 2 ? 0.0f : w[i]));
  CHECK_CODE(annihilate_weights(w, std::vector<double>(4, 1.0), 0.8), ErrorCode::kShape);
  CHECK_CODE(annihilate_channels(w, {5}), ErrorCode::kShape);
}

TEST_CASE("basis alignment statistics") {
  const AlignmentStats e3 = basis_alignment_stats({axis_concept(8, 3).direction});
  CHECK(e3.max == doctest::Approx(1.0));
  const AlignmentStats uni = basis_alignment_stats({std::vector<double>(4, 0.5)});
  CHECK(uni.mean == doctest::Approx(0.5));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> dist;
  std::vector<std::vector<double>> vs;
  double ref_mean = 0.0;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> v(64);
    for (auto& x : v) x = dist(rng);
    // direct oracle: max over e_j of |cos(v, e_j)|
    double best = 0.0;
    for (std::size_t j = 0; j < 64; ++j) {
      std::vector<double> e(64, 0.0);
      e[j] = 1.0;
      best = std::max(best, std::abs(cosine_similarity(v, e)));
    }
    ref_mean += best / 20.0;
    vs.push_back(v);
  }
  const AlignmentStats s = basis_alignment_stats(vs);
  CHECK(s.mean == doctest::Approx(ref_mean).epsilon(1e-12));
  CHECK(s.max < 0.5);
  CHECK_CODE(basis_alignment_stats({std::vector<double>(3, 0.0)}), ErrorCode::kInvalidArgument);
  CHECK_CODE(basis_alignment_stats({}), ErrorCode::kInvalidArgument);
}

TEST_CASE("top_features") {
  CHECK(top_features(std::vector<double>{0.1, -5, 3, 0.2}, 0.5) == std::vector<std::size_t>{1, 2});
  CHECK(top_features(std::vector<double>{0.1, -5, 3, 0.2}, 0.01) == std::vector<std::size_t>{1});
  CHECK_CODE(top_features(std::vector<double>{1, 2}, 1.0), ErrorCode::kInvalidArgument);
  CHECK_CODE(top_features(std::vector<double>{1, 2}, 0.0), ErrorCode::kInvalidArgument);
}

TEST_CASE("pgi_pgu: a model that reads a single feature") {
  nn::MlpModel model({4, 3, 2}, 5);
  DenseTensor& w0 = model.weight(0);
  for (std::size_t h = 0; h < 3; ++h)
    for (std::size_t f = 0; f < 4; ++f) w0[h * 4 + f] = f == 0 ? 1.0f + static_cast<float>(h) : 0.0f;
  for (std::size_t h = 0; h < 3; ++h) model.bias(0)[h] = 0.1f;
  std::mt19937_64 rng(6);
  const DenseTensor inputs({10, 4}, test::normal_floats(40, rng));
  const std::vector<std::vector<double>> expl(10, std::vector<double>{1, 0, 0, 0});
  const Faithfulness f = pgi_pgu(model, inputs, expl, 0.25, 0.5, 200, 7);
  CHECK(f.pgi > 0.0);
  CHECK(f.pgu == 0.0);

  const Faithfulness none = pgi_pgu(model, inputs, expl, 0.25, 0.0, 50, 7);
  CHECK(none.pgi == 0.0);
  CHECK(none.pgu == 0.0);

  const Faithfulness again = pgi_pgu(model, inputs, expl, 0.25, 0.5, 200, 7);
  CHECK(again.pgi == f.pgi);

  CHECK_CODE(pgi_pgu(model, inputs, expl, 1.0, 0.5, 10, 7), ErrorCode::kInvalidArgument);
  CHECK_CODE(pgi_pgu(model, inputs, std::vector<std::vector<double>>(9, {1, 0, 0, 0}), 0.25, 0.5, 10, 7),
             ErrorCode::kShape);
}

TEST_CASE("pgi_pgu: random explanations give matching gaps") {
  nn::MlpModel model({6, 8, 2}, 8);
  std::mt19937_64 rng(9);
  const DenseTensor inputs({40, 6}, test::normal_floats(240, rng));
  std::vector<std::vector<double>> expl;
  for (int i = 0; i < 40; ++i) {
    auto f = test::normal_floats(6, rng);
    expl.emplace_back(f.begin(), f.end());
  }
  const Faithfulness f = pgi_pgu(model, inputs, expl, 0.5, 0.5, 1000, 10);
  CHECK(f.pgi > 0.0);
  CHECK(std::abs(f.pgi - f.pgu) <= 0.35 * std::max(f.pgi, f.pgu));
}

TEST_CASE("sdc: a null occlusion degrades nothing") {
  const nn::ConvModel model(4, 4, 1, {3}, 2, 11);
  LabeledBatch data{DenseTensor({6, 4, 4, 1}, std::vector<float>(96, 0.5f)), {0, 0, 0, 1, 1, 1}, 2};
  const int predicted = model.predict_class(data.features.data().subspan(0, 16));
  const AblationReport r =
      sdc(model, data, predicted, {axis_concept(3, 0), axis_concept(3, 1)}, Fill{Fill::Kind::kGray, {}});
  REQUIRE(r.degraded_fraction.size() == 3);
  for (double f : r.degraded_fraction) CHECK(f == 0.0);
  CHECK_FALSE(r.sdc.has_value());
  CHECK(r.concepts_removed == std::vector<std::string>{"neuron:0", "neuron:1"});
}

TEST_CASE("sdc: covering the whole discriminative region destroys the class in one step") {
  Planted p;
  REQUIRE(nn::accuracy(p.model, p.data.batch) >= 0.9);
  MaskOptions everything;
  everything.quantile = 0.0;
  const Fill fill{Fill::Kind::kMean, channel_means(p.data.batch.features)};
  const AblationReport r = sdc(p.model, p.data.batch, 0, {axis_concept(4, 0)}, fill, 0.8, everything);
  CHECK(r.degraded_fraction[1] >= 0.8);
  CHECK(r.sdc == 1u);
}

TEST_CASE("sdc argument checks") {
  const nn::ConvModel model(4, 4, 1, {3}, 2, 11);
  LabeledBatch data{DenseTensor({2, 4, 4, 1}), {0, 1}, 2};
  CHECK_CODE(sdc(model, data, 0, {}, Fill{Fill::Kind::kZero, {}}), ErrorCode::kInvalidArgument);
  CHECK_CODE(sdc(model, data, 2, {axis_concept(3, 0)}, Fill{Fill::Kind::kZero, {}}), ErrorCode::kInvalidArgument);
  LabeledBatch three{DenseTensor({3, 4, 4, 1}), {0, 1, 2}, 3};
  CHECK_CODE(sdc(model, three, 0, {axis_concept(3, 0)}, Fill{Fill::Kind::kZero, {}}), ErrorCode::kInvalidArgument);
}

TEST_CASE("weight ablation: no concepts leaves accuracy unchanged") {
  Planted p;
  const AblationReport r = ablation_with_control(p.model, p.data.batch, 0, {}, 0.8, 2, 1);
  REQUIRE(r.accuracy_after.size() == 1);
  CHECK(r.accuracy_before() == nn::accuracy(p.model, p.data.batch));
}

TEST_CASE("weight ablation: removing every channel leaves chance accuracy") {
  Planted p;
  std::vector<ConceptVector> all;
  for (std::size_t j = 0; j < 4; ++j) all.push_back(axis_concept(4, j));
  const AblationReport r = ablation_with_control(p.model, p.data.batch, 0, all, 0.0, 1, 1);
  CHECK(std::abs(r.accuracy_after.back() - 0.5) <= 0.1);
  // kernel slice 3*3*1 plus one bias per channel
  CHECK(r.zeroed_scalars.back() == 4 * 10);
}

TEST_CASE("weight ablation controls are reproducible") {
  Planted p;
  const std::vector<ConceptVector> one{axis_concept(4, 1)};
  const AblationReport a = ablation_with_control(p.model, p.data.batch, 0, one, 0.5, 3, 42);
  const AblationReport b = ablation_with_control(p.model, p.data.batch, 0, one, 0.5, 3, 42);
  CHECK(a.control_accuracy == b.control_accuracy);
  CHECK(a.control_seeds == std::vector<std::uint64_t>{42, 43, 44});
  CHECK(a.control_mean(1, false) ==
        doctest::Approx((a.control_accuracy[1][0] + a.control_accuracy[1][1] + a.control_accuracy[1][2]) / 3.0));
}
