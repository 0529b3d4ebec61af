#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace picdaq::protocol {

inline constexpr std::size_t kChannels = 4;
inline constexpr std::uint16_t kMaxCode = 1023;
inline constexpr std::size_t kDigitsPerCode = 4;
inline constexpr std::size_t kPayloadSize = kChannels * kDigitsPerCode;  // 16
inline constexpr std::size_t kFrameSize = kPayloadSize + 2;              // + CR LF

/// One sampling instant: codes ordered GP0, GP1, GP2, GP4.
struct Frame {
  std::array<std::uint16_t, kChannels> codes{};

  bool operator==(const Frame&) const = default;
};

enum class RejectReason {
  non_digit,           // non-digit byte inside the 16-byte payload
  missing_terminator,  // byte 16/17 is not CR/LF
  code_out_of_range,   // a 4-digit group exceeds 1023
  bad_length,          // decode_frame given != 18 bytes
};

std::string_view reason_text(RejectReason r);

class FrameError : public std::runtime_error {
 public:
  explicit FrameError(RejectReason reason)
      : std::runtime_error(std::string(reason_text(reason))), reason_(reason) {}
  RejectReason reason() const noexcept { return reason_; }

 private:
  RejectReason reason_;
};

class EncodeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// 16 zero-padded decimal digits then CR LF. Throws EncodeError if any code
/// exceeds 1023.
std::string encode_frame(const Frame& frame);

/// Inverse of encode_frame; throws FrameError on malformed input.
Frame decode_frame(std::string_view bytes);

struct FrameEvent {
  Frame frame;
  bool operator==(const FrameEvent&) const = default;
};

/// A candidate failed validation. Always reported at the byte that exposed it.
struct RejectEvent {
  RejectReason reason;
  bool operator==(const RejectEvent&) const = default;
};

/// Framing was lost after a reject and has been re-established at an LF;
/// `discarded` counts every byte dropped since the bad candidate began.
struct ResyncEvent {
  std::size_t discarded;
  bool operator==(const ResyncEvent&) const = default;
};

using DecodeEvent = std::variant<FrameEvent, RejectEvent, ResyncEvent>;

struct DecoderCounters {
  std::uint64_t frames_ok = 0;
  std::uint64_t frames_rejected = 0;
  std::uint64_t bytes_discarded = 0;

  bool operator==(const DecoderCounters&) const = default;
};

/// Incremental frame decoder with discard-through-LF resynchronisation.
///
/// Candidates always begin at the stream start or right after an LF. A
/// candidate whose framing breaks (non-digit payload byte, wrong terminator)
/// yields a RejectEvent immediately; the decoder then drops bytes up to and
/// including the next LF and reports a ResyncEvent. A well-framed candidate
/// with a group above 1023 is rejected as a whole 18-byte unit and framing is
/// kept, so no ResyncEvent follows it.
///
/// The emitted event sequence does not depend on how the input is chunked.
class Decoder {
 public:
  std::vector<DecodeEvent> feed(std::string_view chunk);
  void feed(std::string_view chunk, std::vector<DecodeEvent>& out);

  const DecoderCounters& counters() const noexcept { return counters_; }
  bool synced() const noexcept { return synced_; }
  std::size_t buffered() const noexcept { return buffer_.size(); }

  void reset();

 private:
  std::string buffer_;  // partial candidate, always < kFrameSize bytes
  bool synced_ = true;
  std::size_t discarding_ = 0;
  DecoderCounters counters_;
};

}  // namespace picdaq::protocol
