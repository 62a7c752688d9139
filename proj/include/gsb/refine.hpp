#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gsb/backends.hpp"
#include "gsb/manifest.hpp"
#include "gsb/textnorm.hpp"

namespace gsb {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Divides P into n channel-atomic splits of similar hours. Channels go,
// largest first, to the split with the fewest hours so far.
std::vector<Manifest> split_pseudo_set(const Manifest& p, int n, std::uint64_t seed);

using TeacherOutputs = std::map<SegmentId, std::string>;

struct GateRecord {
  SegmentId id;
  double cer = 0.0;
  bool retained = false;
};

struct GateResult {
  Manifest retained;
  std::vector<GateRecord> records;  // one per segment with a teacher output
  std::vector<SegmentId> parked;    // no teacher output
};

// Keeps (x, y) when CER(y, teacher(x)) <= tau. The label stays y.
GateResult filter_by_cer(const Manifest& pairs, const TeacherOutputs& teacher_out, double tau);
// Same gate, but survivors take the teacher's text and source teacher(i).
GateResult relabel(const Manifest& pj, const TeacherOutputs& teacher_out, double tau, int iteration);

struct RefineConfig {
  int n = 3;
  double tau = 0.10;
  bool relabel_enabled = true;
  std::string noise_config;  // forwarded to the trainer untouched; must be present
  // Capacity of M_1 .. M_{n+1}. A shorter list repeats its last tag.
  std::vector<std::string> capacities{"M"};
  std::uint64_t seed = 1;
  BatchOptions batch;
  // Stop once this iteration has been committed (used to test resumption).
  std::optional<int> stop_after;

  std::vector<std::string> violations() const;
  void validate() const;
  std::string capacity_for(int model_index) const;  // 1-based
};

// Algorithm state between iterations. `iteration` is the next one to run.
struct RefinementState {
  std::vector<Manifest> splits;
  Manifest refined;
  int iteration = 1;
  double tau = 0.10;
  ModelHandle teacher;
  bool relabel_enabled = true;
  std::string noise_config;
};

struct RefineBackends {
  Transcriber& transcriber;
  Trainer& trainer;
  // Teacher hypotheses are normalized with this profile when set.
  const LanguageProfile* profile = nullptr;
};

struct IterationSummary {
  int iteration = 0;
  std::size_t candidates = 0;
  std::size_t retained = 0;
  std::size_t parked = 0;
  double retained_hours = 0.0;
  ModelHandle student;
};

struct RefineResult {
  Manifest refined;
  std::vector<IterationSummary> iterations;  // those run by this call
  int completed_iteration = 0;
  bool finished = false;
};

// One pass of the loop body: gate (i == 1) or relabel and gate every split
// up to i, train the student on the result and promote it. Artifacts go to
// `run_dir`; nothing in the state changes if the trainer fails.
RefinementState run_iteration(const RefinementState& state, const RefineConfig& cfg, RefineBackends backends,
                              const std::filesystem::path& run_dir, IterationSummary* summary = nullptr);

// The whole algorithm with checkpoints in `run_dir`. Picks up from the last
// committed iteration when the directory already holds a run with the same
// configuration and input.
RefineResult run_refinement(const Manifest& p, const RefineConfig& cfg, RefineBackends backends,
                            const std::filesystem::path& run_dir);

// R after iteration i (0 is the initial R = P_1) from a run directory.
Manifest load_iteration_manifest(const std::filesystem::path& run_dir, int iteration);

}  // namespace gsb
