#include "tcd/serialize.hpp"

#include <bit>
#include <cstdio>
#include <stdexcept>

namespace tcd {

std::string double_to_hex(double v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
  return buf;
}

double hex_to_double(const std::string& s) {
  if (s.size() != 16 || s.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
    throw std::invalid_argument("bad hex float '" + s + "'");
  return std::bit_cast<double>(static_cast<std::uint64_t>(std::stoull(s, nullptr, 16)));
}

nlohmann::json tensor_to_json(const Tensor& t) {
  nlohmann::json data = nlohmann::json::array();
  for (double v : t.values()) data.push_back(double_to_hex(v));
  return {{"shape", t.shape()}, {"data", std::move(data)}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  Shape shape = j.at("shape").get<Shape>();
  const auto& data = j.at("data");
  std::vector<double> values;
  values.reserve(data.size());
  for (const auto& v : data) values.push_back(hex_to_double(v.get<std::string>()));
  return Tensor(std::move(shape), std::move(values));
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"series", c.series},           {"window", c.window},
          {"embed_dim", c.embed_dim},     {"qk_dim", c.qk_dim},
          {"heads", c.heads},             {"ffn_dim", c.ffn_dim},
          {"temperature", c.temperature}, {"kernel_l1", c.kernel_l1},
          {"mask_l1", c.mask_l1},         {"leaky_slope", c.leaky_slope},
          {"time_local", c.time_local}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "series") c.series = v.get<std::size_t>();
    else if (key == "window") c.window = v.get<std::size_t>();
    else if (key == "embed_dim") c.embed_dim = v.get<std::size_t>();
    else if (key == "qk_dim") c.qk_dim = v.get<std::size_t>();
    else if (key == "heads") c.heads = v.get<std::size_t>();
    else if (key == "ffn_dim") c.ffn_dim = v.get<std::size_t>();
    else if (key == "temperature") c.temperature = v.get<double>();
    else if (key == "kernel_l1") c.kernel_l1 = v.get<double>();
    else if (key == "mask_l1") c.mask_l1 = v.get<double>();
    else if (key == "leaky_slope") c.leaky_slope = v.get<double>();
    else if (key == "time_local") c.time_local = v.get<bool>();
    else throw std::invalid_argument("unknown model config key '" + key + "'");
  }
  return c;
}

}  // namespace tcd
