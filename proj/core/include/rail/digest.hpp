#pragma once

#include <span>
#include <string>
#include <string_view>

namespace rail {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const std::byte> data);

std::string base64_encode(std::string_view data);
/// Throws rail::Error(InvalidArgument) on malformed input.
std::string base64_decode(std::string_view text);

}  // namespace rail
