#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <string_view>

#include "lakegrid/scheduler/core.hpp"

namespace lakegrid::scheduler {

/// Messages between scheduler and worker agents, carried over overlay
/// links: u8 type | u32 header length | JSON header | binary blob.
enum class MsgType : std::uint8_t { Advertise = 1, Heartbeat = 2, Dispatch = 3, Result = 4, Abort = 5 };

std::string_view to_string(MsgType t);

struct Message {
  MsgType type = MsgType::Heartbeat;
  nlohmann::json header = nlohmann::json::object();
  std::string blob;
};

std::string encode(const Message& m);
// Throws Error(Input) on malformed input.
Message decode(std::string_view bytes);

nlohmann::json ad_to_json(const WorkerAd& ad);
WorkerAd ad_from_json(const nlohmann::json& j);

}  // namespace lakegrid::scheduler
