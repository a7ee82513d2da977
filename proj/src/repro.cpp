#include "cdisco/repro.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "cdisco/error.hpp"
#include "cdisco/interpret.hpp"

namespace cdisco::repro {

namespace {

// Independent streams per component, all derived from the one global seed.
std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t {
  kPlantedData, kPlantedHeld, kPlantedModel, kPlantedTrain,
  kSuperData, kSuperHeld, kSuperModel, kSuperTrain,
  kCorruptData, kCorruptHeld, kCorruptModel, kCorruptTrain, kCorruptPick,
  kTabData, kTabModel, kTabTrain, kTabNoise,
  kRefine, kControl,
};

std::vector<int> all_classes(int k) {
  std::vector<int> out(static_cast<std::size_t>(k));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

DenseTensor latent_of(const nn::Model& model, std::span<const float> input) {
  const nn::ForwardCache cache = model.forward(input);
  return DenseTensor(model.latent_shape(), std::vector<float>(cache.latent.begin(), cache.latent.end()));
}

std::span<const float> row_of(const DenseTensor& t, std::size_t i) {
  const std::size_t stride = t.size() / t.dim(0);
  return t.data().subspan(i * stride, stride);
}

}  // namespace

Config Config::with_seed(std::uint64_t seed) {
  Config c;
  c.seed = seed;
  // Without a background class a blank or occluded image must still land in
  // one of the pattern classes, and that class can never degrade.
  c.planted.spec.classes.push_back({nn::Pattern::kNone});
  c.superposed.spec.classes = {{nn::Pattern::kHStripes, nn::Pattern::kVStripes},
                               {nn::Pattern::kDots},
                               {nn::Pattern::kCheckerboard}};
  c.planted.train.seed = derive(seed, kPlantedTrain);
  c.superposed.train.seed = derive(seed, kSuperTrain);
  c.corrupted.train.seed = derive(seed, kCorruptTrain);
  c.tab_train.seed = derive(seed, kTabTrain);
  c.refine.seed = derive(seed, kRefine);
  return c;
}

TrainedImages train_images(const ImageSetup& setup, std::uint64_t data_seed, std::uint64_t held_seed,
                           std::uint64_t model_seed) {
  nn::SyntheticImages train = nn::gen_images(setup.spec, setup.n_per_class, data_seed);
  nn::SyntheticImages held = nn::gen_images(setup.spec, setup.held_out_per_class, held_seed);
  const int k = static_cast<int>(setup.spec.classes.size());
  nn::ConvModel model(setup.spec.height, setup.spec.width, setup.spec.channels, setup.conv_channels,
                      static_cast<std::size_t>(k), model_seed);
  nn::TrainHistory history = nn::train(model, train.batch, setup.train);
  ActivationDump dump = nn::make_dump(model, train.batch, all_classes(k));
  BasisBuild build = discover(dump);
  return {std::move(train), std::move(held), std::move(model), std::move(history), std::move(dump), std::move(build)};
}

double mean_mask_iou(const nn::ConvModel& model, const nn::SyntheticImages& held, int class_id,
                     std::span<const double> u, const MaskOptions& options) {
  const std::size_t h = held.masks.dim(1);
  const std::size_t w = held.masks.dim(2);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < held.batch.size(); ++i) {
    if (held.batch.labels[i] != class_id) continue;
    const ConceptMap map = concept_map(latent_of(model, row_of(held.batch.features, i)), u);
    const std::vector<bool> mask = concept_pixel_mask(map, h, w, options);
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t p = 0; p < h * w; ++p) {
      const bool truth = held.masks[i * h * w + p] > 0.5f;
      inter += truth && mask[p];
      uni += truth || mask[p];
    }
    total += uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::kNotFound, "no held-out samples of class " + std::to_string(class_id));
  return total / static_cast<double>(count);
}

PlantedResult run_planted(const Config& config) {
  const std::uint64_t s = config.seed;
  TrainedImages t = train_images(config.planted, derive(s, kPlantedData), derive(s, kPlantedHeld),
                                 derive(s, kPlantedModel));
  PlantedResult r;
  r.train_accuracy = t.history.final_accuracy;
  r.held_accuracy = nn::accuracy(t.model, t.held.batch);
  r.latent_dim = t.dump.latent_dim();

  Fill fill{config.fill, channel_means(t.train.batch.features)};
  const int k = t.dump.class_count;
  for (int c = 0; c < k; ++c) {
    if (config.planted.spec.classes[static_cast<std::size_t>(c)] == std::vector{nn::Pattern::kNone}) continue;
    ClassConcepts cc;
    cc.class_id = c;
    cc.top = rank_and_select(t.build.basis, c, std::max(config.sdc_concepts, config.uniqueness_directions));
    for (auto& v : cc.top) {
      cc.top_z.push_back(t.build.basis.z_scores(t.dump.tracked_index(c), v.source.index));
      for (std::size_t i : max_activating(t.dump, v.direction, 5)) v.member_samples.push_back(t.dump.sample_ids[i]);
    }
    cc.mean_iou = mean_mask_iou(t.model, t.held, c, cc.top.front().direction);
    std::vector<ConceptVector> occluded(cc.top.begin(), cc.top.begin() + static_cast<std::ptrdiff_t>(config.sdc_concepts));
    cc.occlusion = sdc(t.model, t.held.batch, c, occluded, fill, config.degrade_frac);
    cc.weights = ablation_with_control(t.model, t.held.batch, c, {cc.top.front()}, config.keep_frac,
                                       config.n_random_seeds, derive(s, kControl));
    cc.weight_drop = cc.weights.class_accuracy_after[0] - cc.weights.class_accuracy_after[1];
    cc.control_weight_drop = cc.weights.class_accuracy_after[0] - cc.weights.control_mean(1, true);

    for (std::size_t j = 0; j < config.uniqueness_directions; ++j) {
      auto refined = refine_direction(t.dump, cc.top[j].direction, config.refine, cc.top[j].source);
      for (auto& v : refined) {
        v.class_id = c;
        v.rank = static_cast<int>(j);
        r.refined.push_back(std::move(v));
      }
    }
    r.classes.push_back(std::move(cc));
  }
  std::vector<std::vector<double>> vectors;
  for (const auto& v : r.refined) vectors.push_back(v.direction);
  r.alignment = basis_alignment_stats(vectors);
  return r;
}

CensusResult run_census(const Config& config) {
  const std::uint64_t s = config.seed;
  TrainedImages t = train_images(config.superposed, derive(s, kSuperData), derive(s, kSuperHeld),
                                 derive(s, kSuperModel));
  CensusResult r;
  r.train_accuracy = t.history.final_accuracy;
  const std::size_t d = t.dump.latent_dim();
  std::vector<std::vector<double>> neurons;
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> e(d, 0.0);
    e[j] = 1.0;
    neurons.push_back(std::move(e));
  }
  std::vector<std::vector<double>> singular;
  for (std::size_t j = 0; j < t.build.basis.components(); ++j) singular.push_back(t.build.basis.direction(j));
  r.neurons = polysemanticity_census(t.dump, neurons, config.refine);
  r.singular = polysemanticity_census(t.dump, singular, config.refine);

  // The class carrying two patterns.
  int bisemantic_class = 0;
  for (std::size_t c = 0; c < config.superposed.spec.classes.size(); ++c) {
    if (config.superposed.spec.classes[c].size() == 2) {
      bisemantic_class = static_cast<int>(c);
      break;
    }
  }
  const auto top = rank_and_select(t.build.basis, bisemantic_class, 1);
  r.bisemantic_direction = top.front().source.index;
  r.bisemantic_refined = refine_direction(t.dump, top.front().direction, config.refine, top.front().source);
  const auto& pair = config.superposed.spec.classes[static_cast<std::size_t>(bisemantic_class)];
  for (const auto& v : r.bisemantic_refined) {
    std::vector<double> share(pair.size(), 0.0);
    for (const auto& id : v.member_samples) {
      const nn::Pattern p = t.train.patterns[t.dump.find_sample(id)];
      for (std::size_t q = 0; q < pair.size(); ++q) share[q] += p == pair[q];
    }
    for (double& x : share) x /= static_cast<double>(std::max<std::size_t>(1, v.member_samples.size()));
    r.pattern_share.push_back(std::move(share));
  }
  return r;
}

DenseTensor blur(const DenseTensor& image, int passes) {
  if (image.rank() != 3) throw Error(ErrorCode::kShape, "blur expects [H, W, C]");
  const int h = static_cast<int>(image.dim(0));
  const int w = static_cast<int>(image.dim(1));
  const int c = static_cast<int>(image.dim(2));
  std::vector<double> cur(image.data().begin(), image.data().end());
  std::vector<double> next(cur.size());
  for (int pass = 0; pass < passes; ++pass) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int dy = -2; dy <= 2; ++dy) {
            for (int dx = -2; dx <= 2; ++dx) {
              const int yy = std::clamp(y + dy, 0, h - 1);
              const int xx = std::clamp(x + dx, 0, w - 1);
              acc += cur[static_cast<std::size_t>((yy * w + xx) * c + ch)];
            }
          }
          next[static_cast<std::size_t>((y * w + x) * c + ch)] = acc / 25.0;
        }
      }
    }
    cur.swap(next);
  }
  return DenseTensor(image.shape(), std::vector<float>(cur.begin(), cur.end()));
}

OutlierResult run_outliers(const Config& config) {
  const std::uint64_t s = config.seed;
  const ImageSetup& setup = config.corrupted;
  nn::SyntheticImages data = nn::gen_images(setup.spec, setup.n_per_class, derive(s, kCorruptData));
  const std::size_t n = data.batch.size();
  const int k = data.batch.class_count;

  OutlierResult r;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive(s, kCorruptPick));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_bad = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(config.corrupt_frac * static_cast<double>(n))));
  r.corrupted.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_bad));
  std::sort(r.corrupted.begin(), r.corrupted.end());
  const std::size_t stride = data.batch.features.size() / n;
  auto features = data.batch.features.mutable_data();
  const Shape image_shape{setup.spec.height, setup.spec.width, setup.spec.channels};
  for (std::size_t i : r.corrupted) {
    data.batch.labels[i] = (data.batch.labels[i] + 1) % k;
    const DenseTensor blurred = blur(DenseTensor(image_shape, std::vector<float>(row_of(data.batch.features, i).begin(),
                                                                                 row_of(data.batch.features, i).end())),
                                     3);
    std::copy(blurred.data().begin(), blurred.data().end(), features.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }

  nn::ConvModel model(setup.spec.height, setup.spec.width, setup.spec.channels, setup.conv_channels,
                      static_cast<std::size_t>(k), derive(s, kCorruptModel));
  r.train_accuracy = nn::train(model, data.batch, setup.train).final_accuracy;
  ActivationDump dump = nn::make_dump(model, data.batch, all_classes(k));
  BasisBuild build = discover(dump);

  std::set<std::size_t> dirs;
  for (int c = 0; c < k; ++c) {
    for (const auto& v : rank_and_select(build.basis, c, config.outlier_directions)) dirs.insert(v.source.index);
  }
  r.report = flag_outliers(build.batch, std::vector<std::size_t>(dirs.begin(), dirs.end()), config.outlier_target_frac,
                           1.5, dump.sample_ids);
  flagged_accuracy(r.report, nn::predict_all(model, data.batch), data.batch.labels);

  r.base_rate = static_cast<double>(n_bad) / static_cast<double>(n);
  std::size_t hits = 0;
  for (const auto& f : r.report.flagged) hits += std::binary_search(r.corrupted.begin(), r.corrupted.end(), f.index);
  r.flagged_rate = r.report.flagged.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(r.report.flagged.size());
  return r;
}

FaithfulnessResult run_faithfulness(const Config& config) {
  const std::uint64_t s = config.seed;
  const LabeledBatch data =
      nn::gen_tabular(config.tab_features, config.tab_active, config.tab_samples, config.tab_label_noise, derive(s, kTabData));
  std::vector<std::size_t> sizes{config.tab_features};
  sizes.insert(sizes.end(), config.tab_hidden.begin(), config.tab_hidden.end());
  sizes.push_back(2);
  nn::MlpModel model(sizes, derive(s, kTabModel));

  FaithfulnessResult r;
  r.train_accuracy = nn::train(model, data, config.tab_train).final_accuracy;
  const ActivationDump dump = nn::make_dump(model, data, {0, 1});
  const BasisBuild build = discover(dump);
  const ConceptVector concept_vector = rank_and_select(build.basis, 1, 1).front();
  r.concept_direction = concept_vector.source.index;

  const std::size_t n_eval = std::min(config.tab_eval_inputs, data.size());
  const std::size_t m = config.tab_features;
  DenseTensor inputs({n_eval, m}, std::vector<float>(data.features.data().begin(),
                                                      data.features.data().begin() + static_cast<std::ptrdiff_t>(n_eval * m)));
  std::vector<std::vector<double>> explanations;
  r.importance.assign(m, 0.0);
  for (std::size_t i = 0; i < n_eval; ++i) {
    auto scores = tabular_importance(concept_vector.direction, model.latent_jacobian(inputs.data().subspan(i * m, m)));
    for (std::size_t f = 0; f < m; ++f) r.importance[f] += std::abs(scores[f]) / static_cast<double>(n_eval);
    explanations.push_back(std::move(scores));
  }
  r.scores = pgi_pgu(model, inputs, explanations, config.tab_top_frac, config.tab_noise_std, config.tab_perturbations,
                     derive(s, kTabNoise));
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r.importance[a] > r.importance[b]; });
  r.top_features.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(config.tab_active.size(), m)));
  return r;
}

Result run_all(const Config& config) {
  Result r;
  r.config = config;
  r.planted = run_planted(config);
  r.census = run_census(config);
  r.outliers = run_outliers(config);
  r.faithfulness = run_faithfulness(config);
  return r;
}

}  // namespace cdisco::repro
