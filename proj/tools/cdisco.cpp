// cdisco: command-line front end. Every command writes under --out and
// exits 0 ok, 1 usage, 2 data/validation, 3 numerical.
#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "cdisco/activation_store.hpp"
#include "cdisco/discovery.hpp"
#include "cdisco/disentangle.hpp"
#include "cdisco/error.hpp"
#include "cdisco/evaluate.hpp"
#include "cdisco/explore.hpp"
#include "cdisco/interpret.hpp"
#include "cdisco/mininn.hpp"
#include "cdisco/report.hpp"
#include "cdisco/repro.hpp"

namespace fs = std::filesystem;
using namespace cdisco;
using report::json;

namespace {

// Bad invocation detected after parsing (missing inputs, out-of-range flags).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_path(const std::string& flag, const std::string& path) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (!fs::exists(path)) throw UsageError(flag + " " + path + " does not exist");
}

void require_frac(const std::string& flag, double v, bool open_low = false) {
  const bool ok = open_low ? (v > 0.0 && v <= 1.0) : (v >= 0.0 && v <= 1.0);
  if (!ok || !std::isfinite(v)) throw UsageError(flag + " must lie in " + (open_low ? "(0, 1]" : "[0, 1]"));
}

void make_out(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + out + ": " + ec.message());
}

struct Common {
  std::string dump;
  std::string out;
  std::string layer;
  std::uint64_t seed = 0;
};

ActivationDump open_dump(const Common& c) {
  require_path("--dump", c.dump);
  ActivationDump d = load_dump(c.dump);
  if (!c.layer.empty() && c.layer != d.layer_name) {
    throw Error(ErrorCode::kValidation, "dump holds layer '" + d.layer_name + "', not '" + c.layer + "'");
  }
  return d;
}

std::vector<double> read_concept(const std::string& path, std::size_t d) {
  require_path("--concept", path);
  const DenseTensor t = read_tensor(path);
  if (t.rank() != 1 || t.dim(0) != d) {
    throw Error(ErrorCode::kShape, "concept " + path + " has shape " + shape_to_string(t.shape()) + ", latent dim is " +
                                       std::to_string(d));
  }
  return {t.data().begin(), t.data().end()};
}

void write_concept(const std::vector<double>& u, const fs::path& path) {
  write_tensor(DenseTensor({u.size()}, std::vector<float>(u.begin(), u.end())), path);
}

std::vector<int> classes_or_all(const std::vector<int>& requested, const ActivationDump& dump) {
  if (requested.empty()) return dump.tracked_classes;
  for (int c : requested) dump.tracked_index(c);
  return requested;
}

std::string safe_name(const std::string& id) {
  std::string s = id;
  for (char& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  }
  return s;
}

// Mean over channels of one [H, W, C] image, as an [H, W] map.
DenseTensor image_plane(const DenseTensor& image) {
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  std::vector<float> plane(h * w, 0.0f);
  for (std::size_t p = 0; p < h * w; ++p) {
    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) acc += image[p * c + k];
    plane[p] = static_cast<float>(acc / static_cast<double>(c));
  }
  return DenseTensor({h, w}, std::move(plane));
}

std::vector<std::size_t> parse_sizes(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string part = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      const long v = std::stol(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError(flag + " expects positive comma-separated integers, got '" + text + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

void check_threads() {
  // Engine work is single-threaded; the variable is still validated so a
  // typo does not go unnoticed.
  if (const char* t = std::getenv("CDISCO_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(t, &end, 10);
    if (end == t || *end != '\0' || v < 1) throw UsageError("CDISCO_THREADS must be a positive integer");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept discovery over layer activations"};
  app.require_subcommand(1);
  Common c;

  auto add_common = [&](CLI::App* sub, bool dump, bool seed) {
    sub->add_option("--out", c.out, "output directory")->required();
    if (dump) {
      sub->add_option("--dump", c.dump, "activation dump directory")->required();
      sub->add_option("--layer", c.layer, "expected layer name");
    }
    if (seed) sub->add_option("--seed", c.seed, "global seed");
  };

  // synth
  std::string synth_kind = "images";
  std::size_t n_per_class = 300;
  double noise_std = 0.3;
  std::string patterns_text = "h_stripes,dots,checkerboard";
  std::size_t tab_features = 10;
  std::string tab_active_text = "3,7";
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, false, true);
  synth->add_option("--kind", synth_kind)->check(CLI::IsMember({"images", "tabular"}));
  synth->add_option("--n", n_per_class, "samples per class (images) or in total (tabular)");
  synth->add_option("--noise-std", noise_std);
  synth->add_option("--patterns", patterns_text, "comma-separated, '+' joins two patterns into one class");
  synth->add_option("--features", tab_features);
  synth->add_option("--active", tab_active_text);

  // train
  std::string data_dir;
  std::string model_dir;
  std::string arch_text;
  nn::TrainConfig train_config{.epochs = 12, .lr = 0.05, .batch_size = 8, .seed = 0};
  auto* train = app.add_subcommand("train", "train a mini model");
  add_common(train, false, true);
  train->add_option("--data", data_dir)->required();
  train->add_option("--arch", arch_text, "conv channels or mlp hidden sizes, comma-separated");
  train->add_option("--epochs", train_config.epochs)->check(CLI::PositiveNumber);
  train->add_option("--lr", train_config.lr)->check(CLI::NonNegativeNumber);
  train->add_option("--batch-size", train_config.batch_size)->check(CLI::PositiveNumber);

  // dump
  std::vector<int> classes;
  std::string convention = "logit";
  auto* dump = app.add_subcommand("dump", "extract activations and gradients");
  add_common(dump, false, false);
  dump->add_option("--model", model_dir)->required();
  dump->add_option("--data", data_dir)->required();
  dump->add_option("--class", classes, "tracked classes (default all)");
  dump->add_option("--convention", convention)->check(CLI::IsMember({"logit", "probability"}));

  // discover
  std::size_t m = 1;
  std::size_t members = 5;
  auto* discover_cmd = app.add_subcommand("discover", "rank singular directions per class");
  add_common(discover_cmd, true, false);
  discover_cmd->add_option("--class", classes, "classes to report (default all tracked)");
  discover_cmd->add_option("--m", m, "concepts per class")->check(CLI::PositiveNumber);
  discover_cmd->add_option("--members", members, "top member samples listed per concept");

  // refine / census
  RefineConfig refine_config;
  std::string concept_path;
  int concept_class = -1;
  std::size_t rank = 0;
  auto add_refine = [&](CLI::App* sub) {
    sub->add_option("--top-count", refine_config.top_count, "0 picks max(30, 2% of N)");
    sub->add_option("--threshold-frac", refine_config.threshold_frac);
    sub->add_option("--min-cluster-size", refine_config.min_cluster_size)->check(CLI::PositiveNumber);
  };
  auto* refine = app.add_subcommand("refine", "split a direction into cluster concept vectors");
  add_common(refine, true, true);
  add_refine(refine);
  refine->add_option("--concept", concept_path, "direction file (.cdad)");
  refine->add_option("--class", concept_class, "take the class's ranked direction instead of --concept");
  refine->add_option("--rank", rank, "0-based rank for --class");

  auto* census = app.add_subcommand("census", "cluster counts for neurons vs singular vectors");
  add_common(census, true, true);
  add_refine(census);

  // maps / masks
  std::vector<std::string> samples;
  std::size_t n_samples = 5;
  bool use_abs = false;
  auto* maps = app.add_subcommand("maps", "concept activation maps as PGM");
  add_common(maps, true, false);
  maps->add_option("--concept", concept_path)->required();
  maps->add_option("--sample", samples, "sample ids (default: the most activating)");
  maps->add_option("--count", n_samples, "samples when --sample is absent")->check(CLI::PositiveNumber);

  auto* masks = app.add_subcommand("masks", "segmentation masks at image resolution");
  add_common(masks, true, false);
  masks->add_option("--concept", concept_path)->required();
  masks->add_option("--data", data_dir)->required();
  masks->add_option("--sample", samples);
  masks->add_option("--count", n_samples)->check(CLI::PositiveNumber);
  masks->add_flag("--abs", use_abs, "threshold |map|");

  // ablations
  std::string fill_text = "mean";
  double degrade_frac = 0.8;
  double keep_frac = 0.8;
  std::size_t n_controls = 10;
  auto* occlude = app.add_subcommand("ablate-occlude", "smallest destroying concepts by occlusion");
  add_common(occlude, true, false);
  occlude->add_option("--model", model_dir)->required();
  occlude->add_option("--data", data_dir)->required();
  occlude->add_option("--class", concept_class)->required();
  occlude->add_option("--m", m, "concepts to remove")->check(CLI::PositiveNumber);
  occlude->add_option("--fill", fill_text)->check(CLI::IsMember({"mean", "gray", "zero"}));
  occlude->add_option("--degrade-frac", degrade_frac);

  auto* weights = app.add_subcommand("ablate-weights", "concept weight annihilation with random control");
  add_common(weights, true, true);
  weights->add_option("--model", model_dir)->required();
  weights->add_option("--data", data_dir)->required();
  weights->add_option("--class", concept_class)->required();
  weights->add_option("--m", m)->check(CLI::PositiveNumber);
  weights->add_option("--keep-frac", keep_frac);
  weights->add_option("--controls", n_controls)->check(CLI::PositiveNumber);

  // outliers
  double target_frac = 0.10;
  auto* outliers = app.add_subcommand("outliers", "flag training samples outside IQR fences");
  add_common(outliers, true, false);
  outliers->add_option("--m", m, "top directions per class")->check(CLI::PositiveNumber);
  outliers->add_option("--target-frac", target_frac);
  outliers->add_option("--model", model_dir, "adds accuracy on flagged vs rest");
  outliers->add_option("--data", data_dir, "data the dump was made from");

  // faithfulness
  double top_frac = 0.2;
  std::size_t n_perturb = 1000;
  std::size_t n_eval = 100;
  auto* faith = app.add_subcommand("faithfulness", "PGI/PGU of concept explanations on a tabular model");
  add_common(faith, true, true);
  faith->add_option("--model", model_dir)->required();
  faith->add_option("--data", data_dir)->required();
  faith->add_option("--class", concept_class, "class whose top concept explains (default 1)");
  faith->add_option("--noise-std", noise_std);
  faith->add_option("--top-frac", top_frac);
  faith->add_option("--perturbations", n_perturb)->check(CLI::PositiveNumber);
  faith->add_option("--inputs", n_eval)->check(CLI::PositiveNumber);

  // repro
  auto* repro_cmd = app.add_subcommand("repro", "run the synthetic experiment suite");
  add_common(repro_cmd, false, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  }

  try {
    check_threads();
    const fs::path out(c.out);

    if (synth->parsed()) {
      if (!(noise_std >= 0.0 && std::isfinite(noise_std))) throw UsageError("--noise-std must be >= 0");
      if (n_per_class == 0) throw UsageError("--n must be positive");
      nn::StoredData data;
      data.kind = synth_kind;
      if (synth_kind == "images") {
        nn::SyntheticSpec spec;
        spec.noise_std = noise_std;
        spec.classes.clear();
        for (const std::string& group : CLI::detail::split(patterns_text, ',')) {
          std::vector<nn::Pattern> alternatives;
          for (const std::string& name : CLI::detail::split(group, '+')) {
            try {
              alternatives.push_back(nn::parse_pattern(name));
            } catch (const Error&) {
              throw UsageError("unknown pattern '" + name + "'");
            }
          }
          spec.classes.push_back(alternatives);
        }
        if (spec.classes.size() < 2) throw UsageError("--patterns needs at least 2 classes");
        nn::SyntheticImages images = nn::gen_images(spec, n_per_class, c.seed);
        data.batch = std::move(images.batch);
        data.masks = std::move(images.masks);
        for (auto p : images.patterns) data.patterns.push_back(nn::to_string(p));
      } else {
        const auto active = parse_sizes(tab_active_text, "--active");
        for (std::size_t a : active) {
          if (a >= tab_features) throw UsageError("--active index outside --features");
        }
        data.batch = nn::gen_tabular(tab_features, active, n_per_class, noise_std, c.seed);
      }
      make_out(c.out);
      nn::save_data(data, out);
      report::json j = report::envelope("synth", c.seed);
      j["kind"] = synth_kind;
      j["n"] = data.batch.size();
      j["class_count"] = data.batch.class_count;
      report::write_json(j, out / "report.json");
      return 0;
    }

    if (train->parsed()) {
      require_path("--data", data_dir);
      const nn::StoredData data = nn::load_data(data_dir);
      train_config.seed = c.seed;
      std::unique_ptr<nn::Model> model;
      const std::size_t k = static_cast<std::size_t>(data.batch.class_count);
      if (data.batch.features.rank() == 4) {
        const auto channels = parse_sizes(arch_text.empty() ? "8,16" : arch_text, "--arch");
        const Shape& s = data.batch.features.shape();
        model = std::make_unique<nn::ConvModel>(s[1], s[2], s[3], channels, k, c.seed);
      } else if (data.batch.features.rank() == 2) {
        std::vector<std::size_t> sizes{data.batch.features.dim(1)};
        for (std::size_t h : parse_sizes(arch_text.empty() ? "16,8" : arch_text, "--arch")) sizes.push_back(h);
        sizes.push_back(k);
        model = std::make_unique<nn::MlpModel>(sizes, c.seed);
      } else {
        throw Error(ErrorCode::kShape, "features must be [N, m] or [N, H, W, C]");
      }
      const nn::TrainHistory history = nn::train(*model, data.batch, train_config);
      make_out(c.out);
      nn::save_model(*model, out);
      report::json j = report::envelope("train", c.seed);
      j["arch"] = model->arch();
      j["layer_name"] = model->layer_name();
      j["loss"] = report::numbers(history.loss);
      j["accuracy"] = report::numbers(history.accuracy);
      j["final_accuracy"] = report::number(history.final_accuracy);
      report::write_json(j, out / "report.json");
      return 0;
    }

    if (dump->parsed()) {
      require_path("--model", model_dir);
      require_path("--data", data_dir);
      const auto model = nn::load_model(model_dir);
      const nn::StoredData data = nn::load_data(data_dir);
      std::vector<int> tracked = classes;
      if (tracked.empty()) {
        tracked.resize(static_cast<std::size_t>(data.batch.class_count));
        std::iota(tracked.begin(), tracked.end(), 0);
      }
      const ActivationDump d = nn::make_dump(*model, data.batch, tracked, parse_gradient_convention(convention));
      make_out(c.out);
      save_dump(d, out);
      return 0;
    }

    if (discover_cmd->parsed()) {
      const ActivationDump d = open_dump(c);
      const BasisBuild build = discover(d);
      if (m > build.basis.components()) throw UsageError("--m exceeds the " + std::to_string(build.basis.components()) + " directions");
      make_out(c.out);
      report::json j = report::envelope("discover", c.seed);
      j["layer_name"] = d.layer_name;
      j["n"] = d.sample_count();
      j["d"] = d.latent_dim();
      j["sigma"] = report::numbers(build.basis.sigma);
      report::json per_class = report::json::array();
      std::size_t file_index = 0;
      for (int cls : classes_or_all(classes, d)) {
        report::json concepts = report::json::array();
        for (const ConceptVector& v : rank_and_select(build.basis, cls, m)) {
          const std::string file = "concept_" + std::to_string(file_index++) + ".cdad";
          write_concept(v.direction, out / file);
          report::json ids = report::json::array();
          for (std::size_t i : max_activating(d, v.direction, std::min(members, d.sample_count()))) ids.push_back(d.sample_ids[i]);
          concepts.push_back({{"direction", v.source.index},
                              {"rank", v.rank},
                              {"z", report::number(build.basis.z_scores(d.tracked_index(cls), v.source.index))},
                              {"sigma", report::number(build.basis.sigma[v.source.index])},
                              {"members", ids},
                              {"file", file}});
        }
        per_class.push_back({{"class", cls}, {"concepts", concepts}});
      }
      j["classes"] = per_class;
      report::write_json(j, out / "report.json");
      return 0;
    }

    if (refine->parsed() || census->parsed()) {
      require_frac("--threshold-frac", refine_config.threshold_frac, true);
      refine_config.seed = c.seed;
      const ActivationDump d = open_dump(c);
      make_out(c.out);
      if (census->parsed()) {
        const BasisBuild build = build_basis(d);
        std::vector<std::vector<double>> neurons, singular;
        for (std::size_t j = 0; j < d.latent_dim(); ++j) {
          std::vector<double> e(d.latent_dim(), 0.0);
          e[j] = 1.0;
          neurons.push_back(std::move(e));
        }
        for (std::size_t j = 0; j < build.basis.components(); ++j) singular.push_back(build.basis.direction(j));
        report::json j = report::envelope("census", c.seed);
        j["neurons"] = report::to_json(polysemanticity_census(d, neurons, refine_config));
        j["singular"] = report::to_json(polysemanticity_census(d, singular, refine_config));
        report::write_json(j, out / "report.json");
        return 0;
      }
      std::vector<double> direction;
      ConceptSource origin;
      if (concept_class >= 0) {
        const BasisBuild build = discover(d);
        if (rank >= build.basis.components()) throw UsageError("--rank outside the basis");
        const ConceptVector v = rank_and_select(build.basis, concept_class, rank + 1).back();
        direction = v.direction;
        origin = v.source;
      } else if (!concept_path.empty()) {
        direction = read_concept(concept_path, d.latent_dim());
      } else {
        throw UsageError("refine needs --concept or --class");
      }
      std::vector<std::size_t> top;
      const ClusterOutcome clusters = cluster_top_activators(d, direction, refine_config, &top);
      const std::vector<ConceptVector> refined = refine_direction(d, direction, refine_config, origin);
      report::json j = report::envelope("refine", c.seed);
      j["clustering"] = report::to_json(clusters);
      report::json list = report::json::array();
      for (std::size_t i = 0; i < refined.size(); ++i) {
        const std::string file = "concept_" + std::to_string(i) + ".cdad";
        write_concept(refined[i].direction, out / file);
        report::json entry = report::to_json(refined[i]);
        entry["file"] = file;
        entry["cosine_to_parent"] = report::number(cosine_similarity(refined[i].direction, direction));
        list.push_back(entry);
      }
      j["concepts"] = list;
      report::write_json(j, out / "report.json");
      return 0;
    }

    if (maps->parsed() || masks->parsed()) {
      const ActivationDump d = open_dump(c);
      if (!d.spatial_activations) throw Error(ErrorCode::kValidation, "dump has no spatial activations");
      const std::vector<double> u = read_concept(concept_path, d.latent_dim());
      std::vector<std::size_t> picked;
      if (samples.empty()) {
        picked = max_activating(d, u, std::min(n_samples, d.sample_count()));
      } else {
        for (const auto& id : samples) picked.push_back(d.find_sample(id));
      }
      std::optional<nn::StoredData> data;
      if (masks->parsed()) {
        require_path("--data", data_dir);
        data = nn::load_data(data_dir);
        if (data->batch.size() != d.sample_count() || data->batch.features.rank() != 4) {
          throw Error(ErrorCode::kValidation, "--data must be the image set the dump was made from");
        }
      }
      make_out(c.out);
      report::json j = report::envelope(maps->parsed() ? "maps" : "masks", c.seed);
      report::json files = report::json::array();
      for (std::size_t i : picked) {
        const std::string id = d.sample_ids[i];
        const ConceptMap map = concept_map(d.spatial_sample(i), u);
        const std::string stem = safe_name(id);
        if (maps->parsed()) {
          write_pgm(map.values, out / ("map_" + stem + ".pgm"), true);
          write_tensor(map.values, out / ("map_" + stem + ".cdad"));
          files.push_back({{"sample_id", id}, {"pgm", "map_" + stem + ".pgm"}, {"values", "map_" + stem + ".cdad"}});
        } else {
          const DenseTensor image = data->batch.sample(i);
          const MaskOptions options{.quantile = 0.8, .use_abs = use_abs};
          const std::vector<bool> keep = concept_pixel_mask(map, image.dim(0), image.dim(1), options);
          std::vector<float> bits(keep.size());
          for (std::size_t p = 0; p < keep.size(); ++p) bits[p] = keep[p] ? 1.0f : 0.0f;
          write_pgm(DenseTensor({image.dim(0), image.dim(1)}, std::move(bits)), out / ("mask_" + stem + ".pgm"));
          write_pgm(image_plane(segmentation_mask(map, image, options)), out / ("segment_" + stem + ".pgm"));
          report::json entry = {{"sample_id", id}, {"mask", "mask_" + stem + ".pgm"}, {"segment", "segment_" + stem + ".pgm"}};
          if (data->masks) {
            const std::size_t hw = image.dim(0) * image.dim(1);
            std::size_t inter = 0, uni = 0;
            for (std::size_t p = 0; p < hw; ++p) {
              const bool truth = (*data->masks)[i * hw + p] > 0.5f;
              inter += truth && keep[p];
              uni += truth || keep[p];
            }
            entry["iou"] = uni == 0 ? report::json(nullptr) : report::number(static_cast<double>(inter) / static_cast<double>(uni));
          }
          files.push_back(entry);
        }
      }
      j["samples"] = files;
      report::write_json(j, out / "report.json");
      return 0;
    }

    if (occlude->parsed() || weights->parsed()) {
      require_path("--model", model_dir);
      require_path("--data", data_dir);
      const ActivationDump d = open_dump(c);
      const auto model = nn::load_model(model_dir);
      const nn::StoredData data = nn::load_data(data_dir);
      const BasisBuild build = discover(d);
      if (m > build.basis.components()) throw UsageError("--m exceeds the basis size");
      const std::vector<ConceptVector> concepts = rank_and_select(build.basis, concept_class, m);
      AblationReport r;
      if (occlude->parsed()) {
        require_frac("--degrade-frac", degrade_frac, true);
        const Fill fill{parse_fill(fill_text), channel_means(data.batch.features)};
        r = sdc(*model, data.batch, concept_class, concepts, fill, degrade_frac);
      } else {
        require_frac("--keep-frac", keep_frac);
        const auto* conv = dynamic_cast<const nn::ConvModel*>(model.get());
        if (!conv) throw Error(ErrorCode::kValidation, "weight ablation needs a conv model");
        r = ablation_with_control(*conv, data.batch, concept_class, concepts, keep_frac, n_controls, c.seed);
      }
      make_out(c.out);
      report::json j = report::envelope(occlude->parsed() ? "ablate-occlude" : "ablate-weights", c.seed);
      j["ablation"] = report::to_json(r);
      report::write_json(j, out / "report.json");
      return 0;
    }

    if (outliers->parsed()) {
      require_frac("--target-frac", target_frac);
      const ActivationDump d = open_dump(c);
      const BasisBuild build = discover(d);
      std::set<std::size_t> dirs;
      for (int cls : d.tracked_classes) {
        for (const auto& v : rank_and_select(build.basis, cls, std::min(m, build.basis.components()))) dirs.insert(v.source.index);
      }
      OutlierReport r = flag_outliers(build.batch, {dirs.begin(), dirs.end()}, target_frac, 1.5, d.sample_ids);
      if (!model_dir.empty() || !data_dir.empty()) {
        require_path("--model", model_dir);
        require_path("--data", data_dir);
        const auto model = nn::load_model(model_dir);
        const nn::StoredData data = nn::load_data(data_dir);
        if (data.batch.size() != d.sample_count()) throw Error(ErrorCode::kValidation, "--data does not match the dump");
        flagged_accuracy(r, nn::predict_all(*model, data.batch), d.labels);
      }
      make_out(c.out);
      std::vector<bool> is_flagged(d.sample_count(), false);
      for (std::size_t i : r.flagged_indices()) is_flagged[i] = true;
      if (build.basis.components() >= 2) {
        const std::vector<std::size_t> order(dirs.begin(), dirs.end());
        const std::size_t a = order.front();
        const std::size_t b = order.size() > 1 ? order[1] : (a == 0 ? 1 : 0);
        write_projection_csv(project_2d(build.batch, a, b), d.sample_ids, d.labels, is_flagged, out / "projection.csv");
      }
      report::json j = report::envelope("outliers", c.seed);
      j["outliers"] = report::to_json(r);
      report::write_json(j, out / "report.json");
      return 0;
    }

    if (faith->parsed()) {
      require_frac("--top-frac", top_frac, true);
      if (!(noise_std >= 0.0 && std::isfinite(noise_std))) throw UsageError("--noise-std must be >= 0");
      require_path("--model", model_dir);
      require_path("--data", data_dir);
      const ActivationDump d = open_dump(c);
      const auto model = nn::load_model(model_dir);
      const auto* mlp = dynamic_cast<const nn::MlpModel*>(model.get());
      if (!mlp) throw Error(ErrorCode::kValidation, "faithfulness needs an mlp model");
      const nn::StoredData data = nn::load_data(data_dir);
      if (data.batch.features.rank() != 2) throw Error(ErrorCode::kShape, "faithfulness needs tabular data [N, m]");
      const BasisBuild build = discover(d);
      const ConceptVector v = rank_and_select(build.basis, concept_class < 0 ? 1 : concept_class, 1).front();
      const std::size_t n = std::min(n_eval, data.batch.size());
      const std::size_t mf = data.batch.features.dim(1);
      DenseTensor inputs({n, mf}, std::vector<float>(data.batch.features.data().begin(),
                                                       data.batch.features.data().begin() + static_cast<std::ptrdiff_t>(n * mf)));
      std::vector<std::vector<double>> explanations;
      std::vector<double> importance(mf, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        auto scores = tabular_importance(v.direction, mlp->latent_jacobian(inputs.data().subspan(i * mf, mf)));
        for (std::size_t f = 0; f < mf; ++f) importance[f] += std::abs(scores[f]) / static_cast<double>(n);
        explanations.push_back(std::move(scores));
      }
      const Faithfulness scores = pgi_pgu(*model, inputs, explanations, top_frac, noise_std, n_perturb, c.seed);
      make_out(c.out);
      report::json j = report::envelope("faithfulness", c.seed);
      j["concept_direction"] = v.source.index;
      j["importance"] = report::numbers(importance);
      j["top_features"] = top_features(importance, top_frac);
      j["pgi"] = report::number(scores.pgi);
      j["pgu"] = report::number(scores.pgu);
      report::write_json(j, out / "report.json");
      return 0;
    }

    if (repro_cmd->parsed()) {
      const repro::Result r = repro::run_all(repro::Config::with_seed(c.seed));
      make_out(c.out);
      report::write_json(report::to_json(r), out / "report.json");
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kNumerical ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
