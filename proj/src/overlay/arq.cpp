#include "lakegrid/overlay/arq.hpp"

#include <algorithm>

namespace lakegrid::overlay {

std::uint64_t ArqSender::push(std::string_view message) {
  std::size_t pos = 0;
  do {
    auto n = std::min(config_.segment_bytes, message.size() - pos);
    Outstanding o;
    o.seg.seq = next_seq_++;
    o.seg.data = std::string(message.substr(pos, n));
    pos += n;
    o.seg.last = pos == message.size();
    queue_.push_back(std::move(o));
  } while (pos < message.size());
  return ++messages_pushed_;
}

std::vector<Segment> ArqSender::poll(milliseconds now) {
  std::vector<Segment> out;
  if (failed_) return out;
  std::size_t limit = std::min(config_.window, queue_.size());
  for (std::size_t i = 0; i < limit; ++i) {
    auto& o = queue_[i];
    if (!o.sent) {
      o.sent = true;
      o.sent_at = now;
      o.rto = config_.rto;
      o.tries = 1;
      out.push_back(o.seg);
    } else if (now - o.sent_at >= o.rto) {
      if (o.tries > config_.max_retries) {
        failed_ = true;
        return {};
      }
      ++o.tries;
      ++retransmissions_;
      o.sent_at = now;
      o.rto = std::min(o.rto * 2, config_.max_rto);
      out.push_back(o.seg);
    }
  }
  return out;
}

void ArqSender::on_ack(std::uint64_t next_expected) {
  while (!queue_.empty() && queue_.front().seg.seq < next_expected && queue_.front().sent) {
    if (queue_.front().seg.last) ++messages_acked_;
    queue_.pop_front();
  }
}

std::vector<std::string> ArqReceiver::on_segment(std::uint64_t seq, bool last, std::string_view data) {
  std::vector<std::string> done;
  if (seq < next_ || buffer_.count(seq)) {
    ++duplicates_;
    return done;
  }
  if (seq >= next_ + window_) return done;
  buffer_.emplace(seq, std::make_pair(last, std::string(data)));
  for (auto it = buffer_.find(next_); it != buffer_.end(); it = buffer_.find(next_)) {
    partial_ += it->second.second;
    if (it->second.first) {
      done.push_back(std::move(partial_));
      partial_.clear();
    }
    buffer_.erase(it);
    ++next_;
  }
  return done;
}

}  // namespace lakegrid::overlay
