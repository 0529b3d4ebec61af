#include "picdaq/protocol.hpp"

#include <optional>

namespace picdaq::protocol {

namespace {

constexpr char kCR = '\r';
constexpr char kLF = '\n';

bool is_digit(char c) { return c >= '0' && c <= '9'; }

/// First framing fault in a candidate, if any.
std::optional<RejectReason> framing_fault(std::string_view candidate) {
  for (std::size_t i = 0; i < candidate.size() && i < kFrameSize; ++i) {
    const char c = candidate[i];
    if (i < kPayloadSize) {
      if (!is_digit(c)) return RejectReason::non_digit;
    } else if (i == kPayloadSize) {
      if (c != kCR) return RejectReason::missing_terminator;
    } else if (c != kLF) {
      return RejectReason::missing_terminator;
    }
  }
  return std::nullopt;
}

/// Parses the payload of a framing-valid candidate.
std::optional<Frame> parse_groups(std::string_view payload) {
  Frame f;
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    unsigned v = 0;
    for (std::size_t d = 0; d < kDigitsPerCode; ++d) {
      v = v * 10 + static_cast<unsigned>(payload[ch * kDigitsPerCode + d] - '0');
    }
    if (v > kMaxCode) return std::nullopt;
    f.codes[ch] = static_cast<std::uint16_t>(v);
  }
  return f;
}

}  // namespace

std::string_view reason_text(RejectReason r) {
  switch (r) {
    case RejectReason::non_digit: return "non-digit in payload";
    case RejectReason::missing_terminator: return "missing CR LF terminator";
    case RejectReason::code_out_of_range: return "code out of range";
    case RejectReason::bad_length: return "frame must be 18 bytes";
  }
  return "?";
}

std::string encode_frame(const Frame& frame) {
  std::string out(kFrameSize, '0');
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    unsigned v = frame.codes[ch];
    if (v > kMaxCode) {
      throw EncodeError("encode_frame: code " + std::to_string(v) + " on channel " +
                        std::to_string(ch) + " exceeds 1023");
    }
    for (std::size_t d = kDigitsPerCode; d-- > 0;) {
      out[ch * kDigitsPerCode + d] = static_cast<char>('0' + v % 10);
      v /= 10;
    }
  }
  out[kPayloadSize] = kCR;
  out[kPayloadSize + 1] = kLF;
  return out;
}

Frame decode_frame(std::string_view bytes) {
  if (bytes.size() != kFrameSize) throw FrameError(RejectReason::bad_length);
  if (auto fault = framing_fault(bytes)) throw FrameError(*fault);
  auto frame = parse_groups(bytes.substr(0, kPayloadSize));
  if (!frame) throw FrameError(RejectReason::code_out_of_range);
  return *frame;
}

std::vector<DecodeEvent> Decoder::feed(std::string_view chunk) {
  std::vector<DecodeEvent> out;
  feed(chunk, out);
  return out;
}

void Decoder::feed(std::string_view chunk, std::vector<DecodeEvent>& out) {
  for (const char c : chunk) {
    if (synced_) {
      const std::size_t pos = buffer_.size();
      std::optional<RejectReason> fault;
      if (pos < kPayloadSize) {
        if (!is_digit(c)) fault = RejectReason::non_digit;
      } else if (c != (pos == kPayloadSize ? kCR : kLF)) {
        fault = RejectReason::missing_terminator;
      }

      if (!fault) {
        buffer_.push_back(c);
        if (buffer_.size() == kFrameSize) {
          if (auto frame = parse_groups(std::string_view(buffer_).substr(0, kPayloadSize))) {
            ++counters_.frames_ok;
            out.emplace_back(FrameEvent{*frame});
          } else {
            ++counters_.frames_rejected;
            counters_.bytes_discarded += kFrameSize;
            out.emplace_back(RejectEvent{RejectReason::code_out_of_range});
          }
          buffer_.clear();
        }
        continue;
      }

      ++counters_.frames_rejected;
      out.emplace_back(RejectEvent{*fault});
      discarding_ = pos;
      counters_.bytes_discarded += pos;
      buffer_.clear();
      synced_ = false;
      // fall through: the offending byte itself is discarded (and may be the LF)
    }

    ++discarding_;
    ++counters_.bytes_discarded;
    if (c == kLF) {
      out.emplace_back(ResyncEvent{discarding_});
      discarding_ = 0;
      synced_ = true;
    }
  }
}

void Decoder::reset() {
  buffer_.clear();
  synced_ = true;
  discarding_ = 0;
  counters_ = {};
}

}  // namespace picdaq::protocol
