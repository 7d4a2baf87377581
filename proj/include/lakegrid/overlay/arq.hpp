#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace lakegrid::overlay {

using std::chrono::milliseconds;

struct ArqConfig {
  std::size_t segment_bytes = 1100;
  std::size_t window = 256;
  milliseconds rto{80};
  milliseconds max_rto{1000};
  int max_retries = 10;
};

struct Segment {
  std::uint64_t seq = 0;
  bool last = false;
  std::string data;
};

/// Sending half of a reliable, ordered message channel over datagrams.
/// Messages are split into numbered segments (first seq is 1); the peer
/// acknowledges cumulatively with the next sequence number it expects.
class ArqSender {
 public:
  explicit ArqSender(ArqConfig config = {}) : config_(config) {}

  // Queues a message (possibly empty); returns its 1-based message number.
  std::uint64_t push(std::string_view message);
  // Segments to put on the wire now: first transmissions inside the window
  // and retransmissions whose timer expired.
  std::vector<Segment> poll(milliseconds now);
  void on_ack(std::uint64_t next_expected);

  // Set once a segment exhausts its retries; the channel is then dead.
  bool failed() const { return failed_; }
  bool idle() const { return queue_.empty(); }
  std::uint64_t messages_pushed() const { return messages_pushed_; }
  std::uint64_t messages_acked() const { return messages_acked_; }
  std::uint64_t retransmissions() const { return retransmissions_; }

 private:
  struct Outstanding {
    Segment seg;
    bool sent = false;
    milliseconds sent_at{0};
    milliseconds rto{0};
    int tries = 0;
  };

  ArqConfig config_;
  std::deque<Outstanding> queue_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t messages_pushed_ = 0;
  std::uint64_t messages_acked_ = 0;
  std::uint64_t retransmissions_ = 0;
  bool failed_ = false;
};

class ArqReceiver {
 public:
  explicit ArqReceiver(std::size_t window = 256) : window_(window) {}

  // Returns the messages completed by this segment, in order. Duplicates
  // and segments beyond the window are ignored.
  std::vector<std::string> on_segment(std::uint64_t seq, bool last, std::string_view data);
  std::uint64_t ack() const { return next_; }
  std::uint64_t duplicates() const { return duplicates_; }

 private:
  std::size_t window_;
  std::uint64_t next_ = 1;
  std::map<std::uint64_t, std::pair<bool, std::string>> buffer_;
  std::string partial_;
  std::uint64_t duplicates_ = 0;
};

}  // namespace lakegrid::overlay
