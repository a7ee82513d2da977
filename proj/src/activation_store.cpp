#include "cdisco/activation_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cdisco/error.hpp"

namespace cdisco {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(GradientConvention c) {
  return c == GradientConvention::kLogit ? "logit" : "probability";
}

const char* to_string(SensitivityConvention c) {
  return c == SensitivityConvention::kGradient ? "gradient" : "pooled_product";
}

GradientConvention parse_gradient_convention(const std::string& s) {
  if (s == "logit") return GradientConvention::kLogit;
  if (s == "probability") return GradientConvention::kProbability;
  throw Error(ErrorCode::kSchema, "unknown gradient_convention '" + s + "'");
}

SensitivityConvention parse_sensitivity_convention(const std::string& s) {
  if (s == "gradient") return SensitivityConvention::kGradient;
  if (s == "pooled_product") return SensitivityConvention::kPooledProduct;
  throw Error(ErrorCode::kSchema, "unknown sensitivity_convention '" + s + "'");
}

std::size_t ActivationDump::tracked_index(int class_id) const {
  auto it = std::find(tracked_classes.begin(), tracked_classes.end(), class_id);
  if (it == tracked_classes.end()) {
    throw Error(ErrorCode::kNotFound, "class " + std::to_string(class_id) + " is not tracked in this dump");
  }
  return static_cast<std::size_t>(it - tracked_classes.begin());
}

DenseTensor ActivationDump::spatial_sample(std::size_t i) const {
  if (!spatial_activations) throw Error(ErrorCode::kNotFound, "dump has no spatial activations");
  const Shape& s = spatial_activations->shape();
  Shape inner{s[1], s[2], s[3]};
  const std::size_t stride = shape_size(inner);
  auto src = spatial_activations->data().subspan(i * stride, stride);
  return DenseTensor(inner, std::vector<float>(src.begin(), src.end()));
}

std::size_t ActivationDump::find_sample(const std::string& id) const {
  auto it = std::find(sample_ids.begin(), sample_ids.end(), id);
  if (it == sample_ids.end()) throw Error(ErrorCode::kNotFound, "no sample with id '" + id + "'");
  return static_cast<std::size_t>(it - sample_ids.begin());
}

void ActivationDump::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kValidation, msg); };
  const std::size_t n = labels.size();
  if (n == 0) fail("dump has no samples");
  if (class_count < 1) fail("class_count must be >= 1");
  if (pooled_activations.rank() != 2) fail("pooled activations must be [N, d]");
  if (pooled_activations.dim(0) != n) fail("pooled activations have " + std::to_string(pooled_activations.dim(0)) + " rows for " + std::to_string(n) + " labels");
  if (sample_ids.size() != n) fail("sample_ids length does not match N");
  if (std::set<std::string>(sample_ids.begin(), sample_ids.end()).size() != n) fail("sample_ids are not unique");
  const std::size_t d = pooled_activations.dim(1);
  if (tracked_classes.empty()) fail("no tracked classes");
  if (gradients.rank() != 3 || gradients.dim(0) != n || gradients.dim(1) != tracked_classes.size() ||
      gradients.dim(2) != d) {
    fail("gradients must be [N, K_g, d], got " + shape_to_string(gradients.shape()));
  }
  for (int y : labels) {
    if (y < 0 || y >= class_count) fail("label " + std::to_string(y) + " outside [0, K)");
  }
  std::set<int> seen;
  for (int c : tracked_classes) {
    if (c < 0 || c >= class_count) fail("tracked class " + std::to_string(c) + " outside [0, K)");
    if (!seen.insert(c).second) fail("tracked class " + std::to_string(c) + " listed twice");
  }
  pooled_activations.check_finite();
  gradients.check_finite();
  if (spatial_activations) {
    const DenseTensor& sp = *spatial_activations;
    if (sp.rank() != 4 || sp.dim(0) != n || sp.dim(3) != d) {
      fail("spatial activations must be [N, H, W, d], got " + shape_to_string(sp.shape()));
    }
    sp.check_finite();
    for (std::size_t i = 0; i < n; ++i) {
      const DenseTensor pooled = pool_gap(spatial_sample(i));
      for (std::size_t j = 0; j < d; ++j) {
        const double ref = pooled_activations[i * d + j];
        if (std::abs(pooled[j] - ref) > 1e-5 * std::max(1.0, std::abs(ref))) {
          fail("spatial GAP disagrees with pooled row " + std::to_string(i) + " at channel " + std::to_string(j));
        }
      }
    }
  }
}

bool ActivationDump::operator==(const ActivationDump& o) const {
  return layer_name == o.layer_name && pooled_activations == o.pooled_activations &&
         spatial_activations == o.spatial_activations && gradients == o.gradients &&
         tracked_classes == o.tracked_classes && labels == o.labels && sample_ids == o.sample_ids &&
         class_count == o.class_count && gradient_convention == o.gradient_convention &&
         sensitivity_convention == o.sensitivity_convention;
}

namespace {

DenseTensor labels_tensor(const std::vector<int>& labels) {
  std::vector<float> v(labels.begin(), labels.end());
  return DenseTensor({labels.size()}, std::move(v));
}

std::vector<int> labels_from_tensor(const DenseTensor& t) {
  if (t.rank() != 1) throw Error(ErrorCode::kValidation, "labels tensor must be rank 1");
  std::vector<int> out;
  out.reserve(t.size());
  for (float v : t.data()) {
    if (v != std::floor(v)) throw Error(ErrorCode::kValidation, "non-integer label");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace

void save_dump(const ActivationDump& dump, const fs::path& dir) {
  dump.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());

  json files = {{"pooled", "pooled.cdad"},
                {"gradients", "gradients.cdad"},
                {"labels", "labels.cdad"},
                {"sample_ids", "sample_ids.json"}};
  write_tensor(dump.pooled_activations, dir / "pooled.cdad");
  write_tensor(dump.gradients, dir / "gradients.cdad");
  write_tensor(labels_tensor(dump.labels), dir / "labels.cdad");
  if (dump.spatial_activations) {
    files["spatial"] = "spatial.cdad";
    write_tensor(*dump.spatial_activations, dir / "spatial.cdad");
  } else {
    fs::remove(dir / "spatial.cdad", ec);
  }
  {
    std::ofstream os(dir / "sample_ids.json", std::ios::trunc);
    if (!os) throw Error(ErrorCode::kIo, "cannot write sample_ids.json in " + dir.string());
    os << json(dump.sample_ids).dump() << '\n';
  }
  json manifest = {{"version", kDumpSchemaVersion},
                   {"layer_name", dump.layer_name},
                   {"n", dump.sample_count()},
                   {"d", dump.latent_dim()},
                   {"k", dump.class_count},
                   {"tracked_classes", dump.tracked_classes},
                   {"gradient_convention", to_string(dump.gradient_convention)},
                   {"sensitivity_convention", to_string(dump.sensitivity_convention)},
                   {"files", files}};
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write manifest.json in " + dir.string());
  os << manifest.dump(2) << '\n';
  if (!os) throw Error(ErrorCode::kIo, "write failed for manifest.json");
}

ActivationDump load_dump(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream is(manifest_path);
  if (!is) throw Error(ErrorCode::kMissingFile, "no manifest.json in " + dir.string());
  json m;
  try {
    m = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("manifest.json is not valid JSON: ") + e.what());
  }

  ActivationDump dump;
  std::size_t n = 0;
  std::size_t d = 0;
  json files;
  try {
    const int version = m.at("version").get<int>();
    if (version != kDumpSchemaVersion) {
      throw Error(ErrorCode::kSchema, "unsupported manifest schema version " + std::to_string(version));
    }
    dump.layer_name = m.at("layer_name").get<std::string>();
    n = m.at("n").get<std::size_t>();
    d = m.at("d").get<std::size_t>();
    dump.class_count = m.at("k").get<int>();
    dump.tracked_classes = m.at("tracked_classes").get<std::vector<int>>();
    dump.gradient_convention = parse_gradient_convention(m.at("gradient_convention").get<std::string>());
    dump.sensitivity_convention =
        parse_sensitivity_convention(m.value("sensitivity_convention", std::string("gradient")));
    files = m.at("files");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("manifest.json: ") + e.what());
  }

  auto file = [&](const char* key) -> fs::path {
    if (!files.contains(key)) throw Error(ErrorCode::kSchema, std::string("manifest lists no '") + key + "' file");
    return dir / files.at(key).get<std::string>();
  };
  dump.pooled_activations = read_tensor(file("pooled"));
  dump.gradients = read_tensor(file("gradients"));
  dump.labels = labels_from_tensor(read_tensor(file("labels")));
  if (files.contains("spatial")) dump.spatial_activations = read_tensor(file("spatial"));
  {
    const fs::path ids_path = file("sample_ids");
    std::ifstream ids(ids_path);
    if (!ids) throw Error(ErrorCode::kMissingFile, "cannot open " + ids_path.string());
    try {
      dump.sample_ids = json::parse(ids).get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchema, std::string("sample_ids.json: ") + e.what());
    }
  }
  if (dump.labels.size() != n || dump.pooled_activations.rank() != 2 || dump.pooled_activations.dim(0) != n) {
    throw Error(ErrorCode::kValidation, "sample count disagrees with manifest n=" + std::to_string(n));
  }
  if (dump.pooled_activations.dim(1) != d) {
    throw Error(ErrorCode::kValidation, "latent dimension disagrees with manifest d=" + std::to_string(d));
  }
  dump.validate();
  return dump;
}

ActivationDump subset_by_class(const ActivationDump& dump, const std::vector<int>& class_ids) {
  if (class_ids.empty()) throw Error(ErrorCode::kInvalidArgument, "subset_by_class needs at least one class");
  std::vector<int> keep(class_ids.begin(), class_ids.end());
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  auto new_id = [&](int c) -> int {
    auto it = std::lower_bound(keep.begin(), keep.end(), c);
    return (it != keep.end() && *it == c) ? static_cast<int>(it - keep.begin()) : -1;
  };
  for (int c : keep) {
    if (std::find(dump.labels.begin(), dump.labels.end(), c) == dump.labels.end()) {
      throw Error(ErrorCode::kNotFound, "class " + std::to_string(c) + " has no samples in the dump");
    }
  }

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < dump.labels.size(); ++i) {
    if (new_id(dump.labels[i]) >= 0) rows.push_back(i);
  }
  if (rows.empty()) throw Error(ErrorCode::kValidation, "class subset is empty");
  std::vector<std::size_t> tracked_src;
  ActivationDump out;
  for (std::size_t j = 0; j < dump.tracked_classes.size(); ++j) {
    const int id = new_id(dump.tracked_classes[j]);
    if (id >= 0) {
      tracked_src.push_back(j);
      out.tracked_classes.push_back(id);
    }
  }
  if (tracked_src.empty()) throw Error(ErrorCode::kValidation, "subset keeps none of the tracked classes");

  const std::size_t d = dump.latent_dim();
  const std::size_t kg = dump.tracked_count();
  out.layer_name = dump.layer_name;
  out.class_count = static_cast<int>(keep.size());
  out.gradient_convention = dump.gradient_convention;
  out.sensitivity_convention = dump.sensitivity_convention;

  std::vector<float> pooled;
  std::vector<float> grads;
  std::vector<float> spatial;
  std::size_t spatial_stride = 0;
  if (dump.spatial_activations) spatial_stride = dump.spatial_activations->size() / dump.sample_count();
  for (std::size_t i : rows) {
    auto p = dump.pooled_activations.data().subspan(i * d, d);
    pooled.insert(pooled.end(), p.begin(), p.end());
    for (std::size_t j : tracked_src) {
      auto g = dump.gradients.data().subspan((i * kg + j) * d, d);
      grads.insert(grads.end(), g.begin(), g.end());
    }
    if (dump.spatial_activations) {
      auto s = dump.spatial_activations->data().subspan(i * spatial_stride, spatial_stride);
      spatial.insert(spatial.end(), s.begin(), s.end());
    }
    out.labels.push_back(new_id(dump.labels[i]));
    out.sample_ids.push_back(dump.sample_ids[i]);
  }
  out.pooled_activations = DenseTensor({rows.size(), d}, std::move(pooled));
  out.gradients = DenseTensor({rows.size(), tracked_src.size(), d}, std::move(grads));
  if (dump.spatial_activations) {
    Shape s = dump.spatial_activations->shape();
    s[0] = rows.size();
    out.spatial_activations = DenseTensor(std::move(s), std::move(spatial));
  }
  return out;
}

}  // namespace cdisco
