// Acceptance suite: one PASS/FAIL line per criterion, thresholds pinned below.
//
//   acceptance            evaluate everything, exit 0 once every criterion ran
//   acceptance --strict   exit 1 if any criterion failed
//   acceptance --only N   evaluate criterion N alone (repeatable)
//
// Criteria 4-10 share one run of the synthetic suite at seed 0.
// support.hpp pulls in doctest; nothing here registers test cases
#define DOCTEST_CONFIG_DISABLE

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

#include "cdisco/discovery.hpp"
#include "cdisco/linalg.hpp"
#include "cdisco/repro.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

#ifndef CDISCO_CLI_PATH
#error "CDISCO_CLI_PATH must name the cdisco executable"
#endif

using namespace cdisco;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 0;

// 1
constexpr int kSvdMatrices = 100;
constexpr std::size_t kSvdMaxD = 32, kSvdMaxN = 256;
constexpr double kSvdTol = 1e-6;
constexpr double kSvdSeconds = 10.0;
// 2
constexpr std::size_t kGradMlpParams = 300, kGradConvParams = 250;
constexpr std::size_t kGradMinParams = 500;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 30.0;
// 3
constexpr int kRankDumps = 50;
constexpr double kRankTol = 1e-6;
// 4
constexpr double kMinTrainAccuracy = 0.95;
constexpr double kMinIou = 0.4;
constexpr double kPlantedSeconds = 300.0;
// 5
constexpr double kDegradeFrac = 0.8;
constexpr std::size_t kMinDegradedClasses = 2;
constexpr std::size_t kMaxSdc = 2;
// 6
constexpr double kMinDropMargin = 0.05;
// 8
constexpr double kMaxMeanAlignment = 0.7;
constexpr std::size_t kMinLatentDim = 16;
// 9
constexpr double kMinRateRatio = 3.0;
// 10
constexpr double kMinPgiOverPgu = 5.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << x;
  return os.str();
}

Verdict svd_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(kSeed + 101);
  double worst_res = 0.0, worst_orth = 0.0;
  for (int t = 0; t < kSvdMatrices; ++t) {
    const std::size_t d = 1 + rng() % kSvdMaxD;
    const std::size_t n = 1 + rng() % kSvdMaxN;
    const Matrix phi = test::normal_matrix(d, n, rng);
    const SvdResult s = svd(phi);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t c = 0; c < n; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < s.sigma.size(); ++j) acc += s.u(i, j) * s.sigma[j] * s.vt(j, c);
        num += (phi(i, c) - acc) * (phi(i, c) - acc);
        den += phi(i, c) * phi(i, c);
      }
    worst_res = std::max(worst_res, std::sqrt(num / den));
    for (std::size_t a = 0; a < s.u.cols(); ++a)
      for (std::size_t b = 0; b < s.u.cols(); ++b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += s.u(i, a) * s.u(i, b);
        worst_orth = std::max(worst_orth, std::abs(acc - (a == b ? 1.0 : 0.0)));
      }
  }
  const double secs = seconds_since(t0);
  return {worst_res <= kSvdTol && worst_orth <= kSvdTol && secs < kSvdSeconds,
          "worst residual " + fmt(worst_res) + ", worst |U^T U - I| " + fmt(worst_orth) + ", " + fmt(secs, 3) + " s"};
}

Verdict gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(kSeed + 202);
  std::size_t checked = 0, skipped = 0;
  double worst = 0.0;
  nn::MlpModel mlp({6, 10, 8, 3}, kSeed + 203);
  nn::ConvModel conv(5, 5, 2, {3, 4}, 3, kSeed + 204);
  for (int draw = 0; draw < 5; ++draw) {
    const auto x = test::normal_floats(6, rng);
    const auto out = gradcheck::check(mlp, x, draw % 3, kGradMlpParams / 5, rng);
    checked += out.samples.size();
    skipped += out.skipped_kinks;
    worst = std::max(worst, out.worst);
  }
  for (int draw = 0; draw < 5; ++draw) {
    const auto x = test::normal_floats(50, rng);
    const auto out = gradcheck::check(conv, x, draw % 3, kGradConvParams / 5, rng);
    checked += out.samples.size();
    skipped += out.skipped_kinks;
    worst = std::max(worst, out.worst);
  }
  const double secs = seconds_since(t0);
  return {checked >= kGradMinParams && worst <= kGradTol && secs < kGradSeconds,
          std::to_string(checked) + " parameters (" + std::to_string(skipped) + " kink draws redrawn), worst rel error " +
              fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

Verdict ranking_oracle() {
  std::mt19937_64 rng(kSeed + 303);
  double worst = 0.0;
  for (int t = 0; t < kRankDumps; ++t) {
    const std::size_t n = 8 + rng() % 40, d = 2 + rng() % 10;
    const int k = 2 + static_cast<int>(rng() % 3);
    const bool spatial = t % 2 == 1;
    const ActivationDump dump = test::random_dump(n, d, k, rng, spatial);
    const BasisBuild b = discover(dump);
    oracle::Grid u, phi(n, std::vector<double>(d));
    for (std::size_t j = 0; j < b.basis.components(); ++j) u.push_back(b.basis.direction(j));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) phi[i][j] = dump.pooled_activations[i * d + j];
    const std::size_t kg = dump.tracked_count();
    std::vector<oracle::Grid> g(n, oracle::Grid(kg, std::vector<double>(d)));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < kg; ++c)
        for (std::size_t j = 0; j < d; ++j) g[i][c][j] = dump.gradients[(i * kg + c) * d + j];
    const auto ref = oracle::class_scores(u, phi, g, dump.labels, dump.tracked_classes, spatial);
    for (std::size_t c = 0; c < ref.size(); ++c)
      for (std::size_t j = 0; j < ref[c].size(); ++j) worst = std::max(worst, std::abs(b.basis.z_scores(c, j) - ref[c][j]));
  }
  return {worst <= kRankTol, std::to_string(kRankDumps) + " dumps, worst |z - z_loop| " + fmt(worst)};
}

struct SuiteRun {
  repro::Config config = repro::Config::with_seed(kSeed);
  repro::PlantedResult planted;
  repro::CensusResult census;
  repro::OutlierResult outliers;
  repro::FaithfulnessResult faithfulness;
  double planted_seconds = 0.0;
  bool planted_done = false, census_done = false, outliers_done = false, faithfulness_done = false;

  const repro::PlantedResult& get_planted() {
    if (!planted_done) {
      const auto t0 = Clock::now();
      planted = repro::run_planted(config);
      planted_seconds = seconds_since(t0);
      planted_done = true;
    }
    return planted;
  }
  const repro::CensusResult& get_census() {
    if (!census_done) census = repro::run_census(config), census_done = true;
    return census;
  }
  const repro::OutlierResult& get_outliers() {
    if (!outliers_done) outliers = repro::run_outliers(config), outliers_done = true;
    return outliers;
  }
  const repro::FaithfulnessResult& get_faithfulness() {
    if (!faithfulness_done) faithfulness = repro::run_faithfulness(config), faithfulness_done = true;
    return faithfulness;
  }
};

Verdict planted_discovery(SuiteRun& run) {
  const auto& p = run.get_planted();
  bool ok = p.train_accuracy >= kMinTrainAccuracy && run.planted_seconds < kPlantedSeconds;
  std::string detail = "train acc " + fmt(p.train_accuracy) + ", IoU";
  for (const auto& c : p.classes) {
    ok = ok && c.mean_iou >= kMinIou;
    detail += " c" + std::to_string(c.class_id) + "=" + fmt(c.mean_iou, 3);
  }
  return {ok && !p.classes.empty(), detail + ", " + fmt(run.planted_seconds, 3) + " s"};
}

Verdict sdc_analogue(SuiteRun& run) {
  const auto& p = run.get_planted();
  std::size_t degraded = 0;
  bool bounded = true;
  std::string detail;
  for (const auto& c : p.classes) {
    const auto& o = c.occlusion;
    const double first = o.degraded_fraction.size() > 1 ? o.degraded_fraction[1] : 0.0;
    degraded += first >= kDegradeFrac;
    bounded = bounded && o.sdc && *o.sdc <= kMaxSdc;
    detail += " c" + std::to_string(c.class_id) + ": top-1 degrades " + fmt(first, 3) + ", sdc " +
              (o.sdc ? std::to_string(*o.sdc) : std::string("none"));
  }
  return {degraded >= kMinDegradedClasses && bounded, std::to_string(degraded) + " classes degraded;" + detail};
}

Verdict weight_control(SuiteRun& run) {
  const auto& p = run.get_planted();
  bool ok = !p.classes.empty();
  std::string detail;
  for (const auto& c : p.classes) {
    ok = ok && c.weight_drop - c.control_weight_drop >= kMinDropMargin;
    detail += " c" + std::to_string(c.class_id) + ": drop " + fmt(c.weight_drop, 3) + " vs control " +
              fmt(c.control_weight_drop, 3);
  }
  return {ok, "class accuracy" + detail};
}

Verdict census(SuiteRun& run) {
  const auto& c = run.get_census();
  const double fn = c.neurons.multi_cluster_fraction();
  const double fs_ = c.singular.multi_cluster_fraction();
  const bool ok = fn > fs_ && c.bisemantic_refined.size() == 2;
  return {ok, "multi-cluster neurons " + fmt(fn, 3) + " vs singular " + fmt(fs_, 3) + ", bisemantic direction " +
                  std::to_string(c.bisemantic_direction) + " refined into " + std::to_string(c.bisemantic_refined.size())};
}

Verdict uniqueness(SuiteRun& run) {
  const auto& p = run.get_planted();
  bool exact = p.alignment.max_abs_cosine.size() == p.refined.size() && !p.refined.empty();
  double mean = 0.0;
  for (std::size_t v = 0; exact && v < p.refined.size(); ++v) {
    const auto& u = p.refined[v].direction;
    double sq = 0.0, peak = 0.0;
    for (double x : u) {
      sq += x * x;
      peak = std::max(peak, std::abs(x));
    }
    const double expected = std::min(1.0, peak / std::sqrt(sq));
    exact = exact && p.alignment.max_abs_cosine[v] == expected;
    mean += expected;
  }
  if (exact) mean /= static_cast<double>(p.refined.size());
  const bool ok = exact && p.latent_dim >= kMinLatentDim && p.alignment.mean < kMaxMeanAlignment;
  return {ok, "d " + std::to_string(p.latent_dim) + ", " + std::to_string(p.refined.size()) + " vectors, mean " +
                  fmt(p.alignment.mean) + ", oracle " + (exact ? "exact" : "MISMATCH")};
}

Verdict outliers(SuiteRun& run) {
  const auto& o = run.get_outliers();
  const auto& r = o.report;
  const bool acc_ok = r.accuracy_on_flagged && r.accuracy_on_rest && *r.accuracy_on_flagged < *r.accuracy_on_rest;
  const bool ok = o.base_rate > 0.0 && o.flagged_rate >= kMinRateRatio * o.base_rate && acc_ok;
  return {ok, "flagged " + std::to_string(r.flagged.size()) + ", corrupted rate " + fmt(o.flagged_rate, 3) + " vs base " +
                  fmt(o.base_rate, 3) + ", accuracy flagged " +
                  (r.accuracy_on_flagged ? fmt(*r.accuracy_on_flagged, 3) : std::string("n/a")) + " vs rest " +
                  (r.accuracy_on_rest ? fmt(*r.accuracy_on_rest, 3) : std::string("n/a"))};
}

Verdict faithfulness(SuiteRun& run) {
  const auto& f = run.get_faithfulness();
  std::vector<std::size_t> order(f.importance.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(f.importance[a]) > std::abs(f.importance[b]); });
  const std::set<std::size_t> top2(order.begin(), order.begin() + std::min<std::size_t>(2, order.size()));
  const std::set<std::size_t> active(run.config.tab_active.begin(), run.config.tab_active.end());
  const bool ok = f.scores.pgi > kMinPgiOverPgu * f.scores.pgu && top2 == active;
  std::string tops;
  for (std::size_t i : top2) tops += (tops.empty() ? "" : ",") + std::to_string(i);
  return {ok, "PGI " + fmt(f.scores.pgi) + " vs PGU " + fmt(f.scores.pgu) + ", top-2 features {" + tops + "}"};
}

Verdict determinism() {
  test::TempDir dir("acceptance");
  std::string reports[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path out = dir / ("run" + std::to_string(i));
    const std::string cmd = std::string(CDISCO_CLI_PATH) + " repro --seed " + std::to_string(kSeed) + " --out " +
                            out.string() + " >/dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "repro exited non-zero"};
    std::ifstream is(out / "report.json", std::ios::binary);
    reports[i].assign(std::istreambuf_iterator<char>(is), {});
  }
  const bool ok = !reports[0].empty() && reports[0] == reports[1];
  return {ok, std::to_string(reports[0].size()) + " bytes, " + (ok ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") {
      strict = true;
    } else if (a == "--only" && i + 1 < argc) {
      only.insert(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--strict] [--only N]...\n";
      return 2;
    }
  }

  SuiteRun run;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"SVD oracle", svd_oracle},
      {"gradient correctness", gradients},
      {"ranking oracle", ranking_oracle},
      {"planted-concept discovery", [&] { return planted_discovery(run); }},
      {"SDC analogue", [&] { return sdc_analogue(run); }},
      {"weight-ablation control", [&] { return weight_control(run); }},
      {"polysemanticity census", [&] { return census(run); }},
      {"uniqueness statistic", [&] { return uniqueness(run); }},
      {"outlier detection", [&] { return outliers(run); }},
      {"faithfulness ordering", [&] { return faithfulness(run); }},
      {"determinism", determinism},
  };

  int failed = 0, evaluated = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    ++evaluated;
    failed += !v.pass;
    std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  std::cout << "acceptance complete: " << evaluated - failed << "/" << evaluated << " passed" << std::endl;
  return strict && failed > 0 ? 1 : 0;
}
