#pragma once

#include <string>

#include "json.hpp"
#include "steerlab/errors.hpp"
#include "steerlab/tensor.hpp"
#include "steerlab/util.hpp"

namespace steerlab {

using json = nlohmann::json;

// Tensors serialize with their raw IEEE-754 bytes (base64) so that round
// trips are bit-exact; rows/cols are kept alongside for validation.
inline json tensor_to_json(const Tensor& t) {
    return json{{"rows", t.rows}, {"cols", t.cols}, {"b64", doubles_to_base64(t.data)}};
}

inline Tensor tensor_from_json(const json& j) {
    if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("b64"))
        throw parse_error("tensor JSON must have rows/cols/b64");
    const size_t r = j.at("rows").get<size_t>();
    const size_t c = j.at("cols").get<size_t>();
    std::vector<double> data = base64_to_doubles(j.at("b64").get<std::string>());
    if (data.size() != r * c) throw parse_error("tensor JSON payload does not match shape");
    return Tensor(r, c, std::move(data));
}

inline json parse_json_file(const std::string& path) {
    json j = json::parse(read_file(path), nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw parse_error("invalid JSON in " + path);
    return j;
}

}  // namespace steerlab
