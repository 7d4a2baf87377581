#include "lakegrid/scheduler/protocol.hpp"

#include "lakegrid/common/error.hpp"

namespace lakegrid::scheduler {

std::string_view to_string(MsgType t) {
  switch (t) {
    case MsgType::Advertise: return "ADVERTISE";
    case MsgType::Heartbeat: return "HEARTBEAT";
    case MsgType::Dispatch: return "DISPATCH";
    case MsgType::Result: return "RESULT";
    case MsgType::Abort: return "ABORT";
  }
  return "?";
}

std::string encode(const Message& m) {
  const auto header = m.header.dump();
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(m.type));
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.raw(header);
  w.raw(m.blob);
  return w.take();
}

Message decode(std::string_view bytes) {
  ByteReader r(bytes);
  Message m;
  try {
    const auto t = r.u8();
    if (t < 1 || t > 5) throw Error(ErrorKind::Input, "unknown worker message type " + std::to_string(t));
    m.type = static_cast<MsgType>(t);
    const auto len = r.u32();
    m.header = nlohmann::json::parse(r.raw(len));
    m.blob = std::string(r.rest());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Input, std::string("bad worker message header: ") + e.what());
  }
  if (!m.header.is_object()) throw Error(ErrorKind::Input, "worker message header must be an object");
  return m;
}

nlohmann::json ad_to_json(const WorkerAd& ad) {
  return {{"worker_id", ad.worker_id},     {"total_slots", ad.total_slots}, {"free_slots", ad.free_slots},
          {"memory_mb", ad.memory_mb},     {"speed_hint", ad.speed_hint},   {"incarnation", ad.incarnation}};
}

WorkerAd ad_from_json(const nlohmann::json& j) {
  try {
    WorkerAd ad;
    ad.worker_id = j.at("worker_id").get<std::string>();
    ad.total_slots = j.at("total_slots").get<std::uint32_t>();
    ad.free_slots = j.at("free_slots").get<std::uint32_t>();
    ad.memory_mb = j.value("memory_mb", std::uint64_t{0});
    ad.speed_hint = j.value("speed_hint", std::string());
    ad.incarnation = j.value("incarnation", std::uint64_t{0});
    return ad;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Input, std::string("bad worker ad: ") + e.what());
  }
}

}  // namespace lakegrid::scheduler
