#include "lakegrid/overlay/signal_channel.hpp"

#include "lakegrid/common/error.hpp"

namespace lakegrid::overlay {

void SignalChannel::send(wire::SigType type, std::string body) {
  tx_.push(wire::encode_frame(wire::SigFrame{type, std::move(body)}));
}

std::vector<wire::SigFrame> SignalChannel::on_segment(const wire::SigSegment& seg, std::string& ack) {
  std::vector<wire::SigFrame> frames;
  for (auto& msg : rx_.on_segment(seg.seq, seg.last, seg.data)) {
    try {
      frames.push_back(wire::decode_frame(msg));
    } catch (const Error&) {
      // A malformed frame is skipped; the stream stays usable.
    }
  }
  ack = wire::encode(wire::SigAck{conn_, rx_.ack()});
  return frames;
}

std::vector<std::string> SignalChannel::poll(milliseconds now) {
  std::vector<std::string> out;
  for (auto& s : tx_.poll(now)) {
    out.push_back(wire::encode(wire::SigSegment{conn_, s.seq, s.last, std::move(s.data)}));
  }
  return out;
}

}  // namespace lakegrid::overlay
