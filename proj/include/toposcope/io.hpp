#pragma once

#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "toposcope/model.hpp"

namespace toposcope {

using Json = nlohmann::ordered_json;

inline constexpr const char* kModelSchema = "toposcope.model/1";
inline constexpr const char* kReportSchema = "toposcope.report/1";

// A model file: a static crystal, a drive, or both, with optional time reversal.
struct LoadedModel {
    std::optional<CrystalModel> model;
    std::optional<DriveProtocol> drive;
    std::optional<AntiUnitary> theta;
    Json source;

    int dimension() const;
};

// Matrices are lists of rows; an entry is a number (real) or [re, im].
Mat matrix_from_json(const Json& j, const std::string& where);
Json matrix_to_json(const Mat& M);

// Throws InputError with the offending field in the message.
LoadedModel parse_model(const Json& j);
LoadedModel load_model(const std::string& path);

// Explicit form of a model (hoppings as stored, partners included).
Json model_to_json(const CrystalModel& m, const AntiUnitary* theta = nullptr);

// Parameter names of a builtin, with their defaults.
std::map<std::string, double> builtin_parameters(const std::string& name);
// Copy of a builtin model object with some parameters replaced.
Json with_parameters(const Json& j, const std::map<std::string, double>& values);

}  // namespace toposcope
