#include "cdisco/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "cdisco/error.hpp"
#include "cdisco/interpret.hpp"

namespace cdisco::report {

double round9(double x) {
  if (!std::isfinite(x) || x == 0.0) return x == 0.0 ? 0.0 : x;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return std::strtod(buf, nullptr);
}

json number(double x) {
  if (!std::isfinite(x)) return nullptr;
  return round9(x);
}

json numbers(std::span<const double> xs) {
  json out = json::array();
  for (double x : xs) out.push_back(number(x));
  return out;
}

json to_json(const ConceptVector& c, bool with_direction) {
  json j = {{"source", to_string(c.source)}, {"rank", c.rank}};
  if (c.class_id) j["class"] = *c.class_id;
  if (!c.member_samples.empty()) j["members"] = c.member_samples;
  if (with_direction) j["direction"] = numbers(c.direction);
  return j;
}

json to_json(const AblationReport& r) {
  json j = {{"class", r.class_id},
            {"concepts_removed", r.concepts_removed},
            {"accuracy_before", number(r.accuracy_before())}};
  if (!r.accuracy_after.empty()) j["accuracy_after"] = numbers(r.accuracy_after);
  if (!r.class_accuracy_after.empty()) j["class_accuracy_after"] = numbers(r.class_accuracy_after);
  if (!r.degraded_fraction.empty()) {
    j["degraded_fraction"] = numbers(r.degraded_fraction);
    j["sdc"] = r.sdc ? json(*r.sdc) : json(nullptr);
  }
  if (!r.zeroed_scalars.empty()) j["zeroed_scalars"] = r.zeroed_scalars;
  if (!r.control_seeds.empty()) {
    j["control_seeds"] = r.control_seeds;
    json overall = json::array();
    json in_class = json::array();
    json mean = json::array();
    json class_mean = json::array();
    for (std::size_t s = 0; s < r.control_accuracy.size(); ++s) {
      overall.push_back(numbers(r.control_accuracy[s]));
      in_class.push_back(numbers(r.control_class_accuracy[s]));
      mean.push_back(number(r.control_mean(s, false)));
      class_mean.push_back(number(r.control_mean(s, true)));
    }
    j["control_accuracy"] = overall;
    j["control_class_accuracy"] = in_class;
    j["control_mean"] = mean;
    j["control_class_mean"] = class_mean;
  }
  return j;
}

json to_json(const Census& c) {
  json hist = json::object();
  for (const auto& [clusters, count] : c.histogram) hist[std::to_string(clusters)] = count;
  return {{"counts", c.counts}, {"histogram", hist}, {"multi_cluster_fraction", number(c.multi_cluster_fraction())}};
}

json to_json(const OutlierReport& r) {
  json flagged = json::array();
  for (const auto& f : r.flagged) {
    flagged.push_back({{"sample_id", f.sample_id}, {"violations", f.violations}, {"distance", number(f.distance)}});
  }
  json bounds = json::array();
  for (std::size_t k = 0; k < r.per_direction_bounds.size(); ++k) {
    const auto& b = r.per_direction_bounds[k];
    bounds.push_back({{"direction", r.directions[k]}, {"lower", number(b.lower)}, {"upper", number(b.upper)}});
  }
  json j = {{"flagged", flagged}, {"fraction_flagged", number(r.fraction_flagged)}, {"per_direction_bounds", bounds}};
  j["accuracy_on_flagged"] = r.accuracy_on_flagged ? number(*r.accuracy_on_flagged) : json(nullptr);
  j["accuracy_on_rest"] = r.accuracy_on_rest ? number(*r.accuracy_on_rest) : json(nullptr);
  return j;
}

json to_json(const AlignmentStats& s) {
  return {{"max_abs_cosine", numbers(s.max_abs_cosine)}, {"max", number(s.max)}, {"mean", number(s.mean)}};
}

json to_json(const Faithfulness& f) { return {{"pgi", number(f.pgi)}, {"pgu", number(f.pgu)}}; }

json to_json(const ClusterOutcome& c) {
  return {{"n_clusters", c.n_clusters}, {"sizes", c.sizes}, {"dropped", c.dropped}};
}

json ranking_json(const ConceptBasis& basis, const ActivationDump& dump, std::size_t top, std::size_t members) {
  if (basis.ranking.size() != basis.tracked_classes.size()) {
    throw Error(ErrorCode::kInvalidArgument, "basis has not been ranked");
  }
  json classes = json::array();
  for (std::size_t k = 0; k < basis.tracked_classes.size(); ++k) {
    json ranked = json::array();
    const std::size_t n = std::min(top, basis.ranking[k].size());
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t col = basis.ranking[k][r];
      json ids = json::array();
      for (std::size_t i : max_activating(dump, basis.direction(col), std::min(members, dump.sample_count()))) {
        ids.push_back(dump.sample_ids[i]);
      }
      ranked.push_back({{"direction", col},
                        {"z", number(basis.z_scores(k, col))},
                        {"sigma", number(basis.sigma[col])},
                        {"members", ids}});
    }
    classes.push_back({{"class", basis.tracked_classes[k]}, {"concepts", ranked}});
  }
  return classes;
}

namespace {

json setup_json(const repro::ImageSetup& s) {
  json classes = json::array();
  for (const auto& alternatives : s.spec.classes) {
    json names = json::array();
    for (auto p : alternatives) names.push_back(nn::to_string(p));
    classes.push_back(names);
  }
  return {{"classes", classes},
          {"image", {s.spec.height, s.spec.width, s.spec.channels}},
          {"patch", s.spec.patch},
          {"amplitude", number(s.spec.amplitude)},
          {"amplitude_jitter", number(s.spec.amplitude_jitter)},
          {"noise_std", number(s.spec.noise_std)},
          {"n_per_class", s.n_per_class},
          {"held_out_per_class", s.held_out_per_class},
          {"conv_channels", s.conv_channels},
          {"epochs", s.train.epochs},
          {"lr", number(s.train.lr)},
          {"batch_size", s.train.batch_size},
          {"train_seed", s.train.seed}};
}

json per_class_json(const repro::ClassConcepts& c) {
  json ranked = json::array();
  for (std::size_t r = 0; r < c.top.size(); ++r) {
    json entry = to_json(c.top[r]);
    entry["direction"] = c.top[r].source.index;
    entry["z"] = number(c.top_z[r]);
    ranked.push_back(entry);
  }
  return {{"class", c.class_id},
          {"concepts", ranked},
          {"mean_iou", number(c.mean_iou)},
          {"occlusion", to_json(c.occlusion)},
          {"weight_ablation", to_json(c.weights)},
          {"weight_drop", number(c.weight_drop)},
          {"control_weight_drop", number(c.control_weight_drop)}};
}

}  // namespace

json to_json(const repro::Config& c) {
  return {{"seed", c.seed},
          {"planted", setup_json(c.planted)},
          {"superposed", setup_json(c.superposed)},
          {"corrupted", setup_json(c.corrupted)},
          {"refine",
           {{"top_count", c.refine.top_count},
            {"threshold_frac", number(c.refine.threshold_frac)},
            {"min_cluster_size", c.refine.min_cluster_size},
            {"seed", c.refine.seed}}},
          {"sdc_concepts", c.sdc_concepts},
          {"degrade_frac", number(c.degrade_frac)},
          {"keep_frac", number(c.keep_frac)},
          {"n_random_seeds", c.n_random_seeds},
          {"uniqueness_directions", c.uniqueness_directions},
          {"corrupt_frac", number(c.corrupt_frac)},
          {"outlier_target_frac", number(c.outlier_target_frac)},
          {"outlier_directions", c.outlier_directions},
          {"tabular",
           {{"features", c.tab_features},
            {"active", c.tab_active},
            {"samples", c.tab_samples},
            {"label_noise", number(c.tab_label_noise)},
            {"hidden", c.tab_hidden},
            {"epochs", c.tab_train.epochs},
            {"lr", number(c.tab_train.lr)},
            {"eval_inputs", c.tab_eval_inputs},
            {"top_frac", number(c.tab_top_frac)},
            {"noise_std", number(c.tab_noise_std)},
            {"perturbations", c.tab_perturbations}}}};
}

json to_json(const repro::Result& r) {
  json j = envelope("repro", r.config.seed);
  j["config"] = to_json(r.config);

  json classes = json::array();
  for (const auto& c : r.planted.classes) classes.push_back(per_class_json(c));
  json refined = json::array();
  for (const auto& v : r.planted.refined) refined.push_back(to_json(v));
  j["planted"] = {{"train_accuracy", number(r.planted.train_accuracy)},
                  {"held_accuracy", number(r.planted.held_accuracy)},
                  {"latent_dim", r.planted.latent_dim},
                  {"classes", classes},
                  {"refined", refined},
                  {"alignment", to_json(r.planted.alignment)}};

  json bisemantic = json::array();
  for (std::size_t i = 0; i < r.census.bisemantic_refined.size(); ++i) {
    json entry = to_json(r.census.bisemantic_refined[i]);
    entry.erase("members");
    entry["size"] = r.census.bisemantic_refined[i].member_samples.size();
    entry["pattern_share"] = numbers(r.census.pattern_share[i]);
    bisemantic.push_back(entry);
  }
  j["census"] = {{"train_accuracy", number(r.census.train_accuracy)},
                 {"neurons", to_json(r.census.neurons)},
                 {"singular", to_json(r.census.singular)},
                 {"bisemantic_direction", r.census.bisemantic_direction},
                 {"bisemantic_concepts", bisemantic}};

  json corrupted = json::array();
  for (std::size_t i : r.outliers.corrupted) corrupted.push_back("s" + std::to_string(i));
  j["outliers"] = {{"train_accuracy", number(r.outliers.train_accuracy)},
                   {"corrupted", corrupted},
                   {"base_rate", number(r.outliers.base_rate)},
                   {"flagged_rate", number(r.outliers.flagged_rate)},
                   {"report", to_json(r.outliers.report)}};

  j["faithfulness"] = {{"train_accuracy", number(r.faithfulness.train_accuracy)},
                       {"concept_direction", r.faithfulness.concept_direction},
                       {"pgi", number(r.faithfulness.scores.pgi)},
                       {"pgu", number(r.faithfulness.scores.pgu)},
                       {"importance", numbers(r.faithfulness.importance)},
                       {"top_features", r.faithfulness.top_features}};
  return j;
}

json envelope(const std::string& command, std::uint64_t seed) {
  return {{"report_version", kReportVersion}, {"command", command}, {"seed", seed}};
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace cdisco::report
