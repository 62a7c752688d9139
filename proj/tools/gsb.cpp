// Operator commands: one pipeline stage per subcommand.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gsb/pipeline.hpp"
#include "gsb/subprocess.hpp"

namespace {

enum ExitCode { kOk = 0, kFatal = 1, kBackend = 2, kInvalid = 3 };

std::optional<gsb::LogLevel> parse_level(const std::string& s) {
  static const std::map<std::string, gsb::LogLevel> levels = {{"debug", gsb::LogLevel::kDebug},
                                                             {"info", gsb::LogLevel::kInfo},
                                                             {"warn", gsb::LogLevel::kWarn},
                                                             {"error", gsb::LogLevel::kError},
                                                             {"off", gsb::LogLevel::kOff}};
  auto it = levels.find(s);
  if (it == levels.end()) return std::nullopt;
  return it->second;
}

const std::map<std::string, std::string>& stage_help() {
  static const std::map<std::string, std::string> h = {
      {"ingest", "probe <audio_root>/<channel>/<video>.wav into videos.jsonl"},
      {"detect-lang", "spoken-language ID on a 30 s window from the middle of each video"},
      {"transcribe", "first-pass transcription of target-language videos in fixed windows"},
      {"align", "forced alignment of each window transcript against backend emissions"},
      {"segment", "cut aligned windows into utterances at silences"},
      {"normalize", "apply the language profile to every segment transcript"},
      {"filter", "charset, duration, text LID and duplicate-cap filters"},
      {"partition", "channel-atomic TRAIN/DEV/TEST assignment"},
      {"refine", "iterative teacher relabeling and student training"},
      {"stats", "hours, segment counts and duration histogram per split"},
      {"timing-report", "wall time and real-time factor of every recorded stage run"},
  };
  return h;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speech corpus construction pipeline"};
  app.require_subcommand(1);

  std::string config_path = "gsb.ini";
  std::vector<std::string> sets;
  std::string level = "info";
  app.add_option("-c,--config", config_path, "pipeline config (INI)");
  app.add_option("--set", sets, "override a config key: section.key=value");
  app.add_option("--log-level", level, "debug, info, warn, error or off");

  std::map<std::string, std::string> flag_values;
  for (const auto& k : gsb::config_keys()) {
    app.add_option("--" + k.name, flag_values[k.name], k.help)->default_str(k.default_value);
  }

  std::optional<int> stop_after;
  std::optional<std::string> manifest;
  std::map<std::string, CLI::App*> subs;
  for (const auto& name : gsb::stage_names()) {
    auto* sub = app.add_subcommand(name, stage_help().at(name));
    sub->fallthrough();
    subs[name] = sub;
  }
  subs["refine"]->add_option("--stop-after", stop_after, "stop once this iteration is committed");
  subs["stats"]->add_option("--manifest", manifest, "manifest to summarize (default: latest stage output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kFatal;
  }

  const auto lvl = parse_level(level);
  if (!lvl) {
    std::cerr << "error: unknown log level '" << level << "'\n";
    return kFatal;
  }
  gsb::set_log_level(*lvl);

  std::string stage;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) stage = name;

  try {
    gsb::PipelineConfig cfg = gsb::PipelineConfig::from_file(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw gsb::ConfigError("--set expects section.key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& k : gsb::config_keys()) {
      if (app.count("--" + k.name) > 0) cfg.set(k.name, flag_values[k.name]);
    }
    gsb::StageOptions opts;
    opts.stop_after = stop_after;
    if (manifest) opts.manifest = *manifest;
    const auto outcome = gsb::run_stage(stage, cfg, opts);
    std::cout << outcome.summary;
    if (!outcome.summary.empty() && outcome.summary.back() != '\n') std::cout << '\n';
    return kOk;
  } catch (const gsb::BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kBackend;
  } catch (const gsb::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kInvalid;
  } catch (const gsb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kFatal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFatal;
  }
}
