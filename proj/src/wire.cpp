#include "gsb/wire.hpp"

namespace gsb::wire {

json handshake(const std::vector<std::string>& roles) {
  return json{{"protocol", std::string(kProtocolVersion)}, {"roles", roles}};
}

json to_json(const TranscribeRequest& r) {
  return json{{"kind", r.task == TranscribeTask::kDetect ? "detect" : "transcribe"},
              {"id", r.id},
              {"audio_path", r.audio_path},
              {"start_s", r.start_s},
              {"end_s", r.end_s},
              {"language_hint", r.language_hint},
              {"model", r.model}};
}

json to_json(const TranscribeResponse& r) {
  json j{{"ok", true}, {"id", r.id}, {"text", r.text}};
  if (r.avg_logprob) j["avg_logprob"] = *r.avg_logprob;
  if (r.detected_language) j["detected_language"] = *r.detected_language;
  if (r.language_prob) j["language_prob"] = *r.language_prob;
  return j;
}

json to_json(const EmitRequest& r) {
  return json{{"kind", "emit"},         {"id", r.id},         {"audio_path", r.audio_path},
              {"start_s", r.start_s},   {"end_s", r.end_s},   {"output_path", r.output_path}};
}

json to_json(const EmitResponse& r) { return json{{"ok", true}, {"id", r.id}, {"path", r.path}}; }

json to_json(const TrainRequest& r) {
  return json{{"kind", "train"},
              {"manifest_path", r.manifest_path},
              {"capacity", r.capacity},
              {"noise_config", r.noise_config},
              {"seed", r.seed}};
}

json to_json(const TrainResponse& r) {
  return json{{"ok", true}, {"model", {{"id", r.handle.id}, {"capacity", r.handle.capacity}}}, {"summary", r.summary}};
}

json to_json(const LidRequest& r) { return json{{"kind", "lid"}, {"id", r.id}, {"text", r.text}}; }

json to_json(const LidResponse& r) {
  return json{{"ok", true}, {"id", r.id}, {"language", r.language}, {"confidence", r.confidence}};
}

TranscribeRequest transcribe_request(const json& j) {
  TranscribeRequest r;
  r.task = j.value("kind", "transcribe") == "detect" ? TranscribeTask::kDetect : TranscribeTask::kTranscribe;
  r.id = field<std::string>(j, "id");
  r.audio_path = field<std::string>(j, "audio_path");
  r.start_s = field<double>(j, "start_s");
  r.end_s = field<double>(j, "end_s");
  r.language_hint = j.value("language_hint", "");
  r.model = j.value("model", "");
  return r;
}

TranscribeResponse transcribe_response(const json& j) {
  TranscribeResponse r;
  r.id = field<std::string>(j, "id");
  r.text = j.value("text", "");
  if (j.contains("avg_logprob")) r.avg_logprob = field<double>(j, "avg_logprob");
  if (j.contains("detected_language")) r.detected_language = field<std::string>(j, "detected_language");
  if (j.contains("language_prob")) r.language_prob = field<double>(j, "language_prob");
  return r;
}

EmitRequest emit_request(const json& j) {
  EmitRequest r;
  r.id = field<std::string>(j, "id");
  r.audio_path = field<std::string>(j, "audio_path");
  r.start_s = field<double>(j, "start_s");
  r.end_s = field<double>(j, "end_s");
  r.output_path = field<std::string>(j, "output_path");
  return r;
}

EmitResponse emit_response(const json& j) { return {field<std::string>(j, "id"), field<std::string>(j, "path")}; }

TrainRequest train_request(const json& j) {
  TrainRequest r;
  r.manifest_path = field<std::string>(j, "manifest_path");
  r.capacity = field<std::string>(j, "capacity");
  r.noise_config = j.value("noise_config", "");
  r.seed = j.value("seed", std::uint64_t{0});
  return r;
}

TrainResponse train_response(const json& j) {
  TrainResponse r;
  const auto m = field<json>(j, "model");
  r.handle.id = field<std::string>(m, "id");
  r.handle.capacity = field<std::string>(m, "capacity");
  r.summary = j.value("summary", "");
  return r;
}

LidRequest lid_request(const json& j) { return {field<std::string>(j, "id"), field<std::string>(j, "text")}; }

LidResponse lid_response(const json& j) {
  LidResponse r;
  r.id = field<std::string>(j, "id");
  r.language = field<std::string>(j, "language");
  r.confidence = field<double>(j, "confidence");
  if (!(r.confidence >= 0.0 && r.confidence <= 1.0))
    throw BackendError("lid confidence outside [0, 1]", false);
  return r;
}

json failure(std::string_view rid, std::string_view message, bool transient) {
  return json{{"rid", rid}, {"ok", false}, {"error", message}, {"transient", transient}};
}

}  // namespace gsb::wire
