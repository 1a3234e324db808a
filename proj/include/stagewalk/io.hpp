#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "stagewalk/core_model.hpp"
#include "stagewalk/estimation.hpp"

namespace stagewalk {

using Json = nlohmann::json;

inline constexpr std::string_view kSchemaVersion = "1";

std::string_view to_string(Convention convention) noexcept;
Convention parse_convention(std::string_view name);
std::string_view to_string(RateMode mode) noexcept;
RateMode parse_rate_mode(std::string_view name);

// Every document carries "schema_version", "kind" and "convention". Indices
// are 0-based. NaN (undefined estimates) is written as null.

Json design_to_json(const StudyDesign& design, Convention convention = Convention::Corrected);
StudyDesign design_from_json(const Json& doc);

/// {"rate_mode", "groups": [{"rates": [...], "transitions": [[[row]...]...],
/// "initial": [...] (optional)}]}; transitions[i-1] holds the moves into
/// stage i.
Json params_to_json(const GroupParams& params, Convention convention = Convention::Corrected);
GroupParams params_from_json(const Json& doc);

Json stats_to_json(const SufficientStats& stats);
SufficientStats stats_from_json(const Json& doc);

Json fit_to_json(const FitResult& fit);
FitResult fit_from_json(const Json& doc);

/// CSV with header path_id,group,stage,state,records,terminal; one row per
/// visit; terminal is "mid" except on a path's last row ("final" or
/// "removed").
std::string write_dataset_csv(const Dataset& data);
/// Throws ParseError or InconsistentPath naming the 1-based line.
Dataset read_dataset_csv(std::string_view text, const StudyDesign& design);

/// FNV-1a 64 of the compact dump (object keys sorted), as 16 hex digits.
std::string canonical_hash(const Json& doc);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
Json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
std::string dump_json(const Json& doc);

}  // namespace stagewalk
