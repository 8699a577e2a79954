#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ar/model.hpp"

namespace ar {

std::string base64_encode_doubles(const std::vector<double>& v);
std::vector<double> base64_decode_doubles(const std::string& s);

nlohmann::json vocab_to_json(const Vocabulary& v);
Vocabulary vocab_from_json(const nlohmann::json& j);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace ar
