#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mscrub/erasers.hpp"

namespace mscrub {

inline constexpr int kEraserFormatVersion = 1;

[[nodiscard]] nlohmann::json eraser_to_json(const Eraser& e);
[[nodiscard]] Eraser eraser_from_json(const nlohmann::json& j);

/// Deterministic text form; floats use shortest round-trip decimals, so
/// deserialize(serialize(e)) reproduces every entry bit for bit.
[[nodiscard]] std::string serialize_eraser(const Eraser& e);
[[nodiscard]] Eraser deserialize_eraser(std::string_view bytes);

} // namespace mscrub
