#include "rail/framing.hpp"

#include <nlohmann/json.hpp>

#include "rail/error.hpp"

namespace rail::framing {

std::string encode_frame(std::string_view payload) {
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(4 + payload.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(payload);
  return out;
}

std::string encode_json_frame(const nlohmann::json& doc) { return encode_frame(doc.dump()); }

void FrameDecoder::feed(std::string_view bytes) {
  if (offset_ > 0 && offset_ * 2 > buffer_.size()) {
    buffer_.erase(0, offset_);
    offset_ = 0;
  }
  buffer_.append(bytes);
}

std::optional<std::string> FrameDecoder::next() {
  if (buffered() < 4) return std::nullopt;
  const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data() + offset_);
  const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                          (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
  if (n > max_frame_) {
    throw Error(ErrorCode::MalformedMessage, "frame of " + std::to_string(n) + " bytes exceeds limit");
  }
  if (buffered() < 4 + std::size_t{n}) return std::nullopt;
  std::string payload = buffer_.substr(offset_ + 4, n);
  offset_ += 4 + n;
  return payload;
}

}  // namespace rail::framing
