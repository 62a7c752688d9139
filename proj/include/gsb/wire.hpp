#pragma once

// JSON codecs for gsb/1 records. Shared by ProcessBackend and the mock
// backend executable.

#include <nlohmann/json.hpp>

#include "gsb/backends.hpp"

namespace gsb::wire {

using nlohmann::json;

json handshake(const std::vector<std::string>& roles);

json to_json(const TranscribeRequest& r);
json to_json(const TranscribeResponse& r);
json to_json(const EmitRequest& r);
json to_json(const EmitResponse& r);
json to_json(const TrainRequest& r);
json to_json(const TrainResponse& r);
json to_json(const LidRequest& r);
json to_json(const LidResponse& r);

TranscribeRequest transcribe_request(const json& j);
TranscribeResponse transcribe_response(const json& j);
EmitRequest emit_request(const json& j);
EmitResponse emit_response(const json& j);
TrainRequest train_request(const json& j);
TrainResponse train_response(const json& j);
LidRequest lid_request(const json& j);
LidResponse lid_response(const json& j);

// Failure record: {"rid":..., "ok":false, "error":..., "transient":...}
json failure(std::string_view rid, std::string_view message, bool transient);

// Throws BackendError when the field is missing or has the wrong type.
template <class T>
T field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw BackendError(std::string("record missing field '") + name + "'", false);
  try {
    return it->template get<T>();
  } catch (const json::exception&) {
    throw BackendError(std::string("record field '") + name + "' has the wrong type", false);
  }
}

}  // namespace gsb::wire
