#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "tcd/model.hpp"
#include "tcd/tensor.hpp"

namespace tcd {

/// 16 lowercase hex digits of the IEEE-754 bit pattern.
std::string double_to_hex(double v);
/// Inverse of `double_to_hex`; throws std::invalid_argument on bad input.
double hex_to_double(const std::string& s);

/// {"shape": [...], "data": ["<hex>", ...]}; round-trips bit-exactly.
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

nlohmann::json model_config_to_json(const ModelConfig& c);
/// Keys missing from `j` keep their defaults; unknown keys throw.
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace tcd
