#pragma once

// Consumer stream framing: [length:4, big-endian][payload: canonical JSON].

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

namespace rail::framing {

inline constexpr std::uint32_t kDefaultMaxFrame = 16u << 20;

std::string encode_frame(std::string_view payload);
std::string encode_json_frame(const nlohmann::json& doc);

/// Incremental decoder for a byte stream. Throws MalformedMessage when a
/// length prefix exceeds the limit; the stream is unusable afterwards.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::uint32_t max_frame = kDefaultMaxFrame) : max_frame_(max_frame) {}

  void feed(std::string_view bytes);
  /// Next complete payload, if one is buffered.
  std::optional<std::string> next();
  std::size_t buffered() const { return buffer_.size() - offset_; }

 private:
  std::uint32_t max_frame_;
  std::string buffer_;
  std::size_t offset_ = 0;
};

}  // namespace rail::framing
