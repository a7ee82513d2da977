#pragma once

#include <filesystem>
#include <json.hpp>

#include "cdisco/discovery.hpp"
#include "cdisco/disentangle.hpp"
#include "cdisco/evaluate.hpp"
#include "cdisco/explore.hpp"
#include "cdisco/repro.hpp"

namespace cdisco::report {

using nlohmann::json;

inline constexpr int kReportVersion = 1;

// Rounds to 9 significant digits so that reports are byte-stable.
double round9(double x);
json number(double x);
json numbers(std::span<const double> xs);

json to_json(const ConceptVector& c, bool with_direction = false);
json to_json(const AblationReport& r);
json to_json(const Census& c);
json to_json(const OutlierReport& r);
json to_json(const AlignmentStats& s);
json to_json(const Faithfulness& f);
json to_json(const ClusterOutcome& c);

// Ranked singular directions per tracked class with z-scores and the ids of
// the `members` most strongly projecting samples.
json ranking_json(const ConceptBasis& basis, const ActivationDump& dump, std::size_t top, std::size_t members);

json to_json(const repro::Config& c);
json to_json(const repro::Result& r);

json envelope(const std::string& command, std::uint64_t seed);

// Pretty-printed with a trailing newline; overwrites.
void write_json(const json& j, const std::filesystem::path& path);

}  // namespace cdisco::report
