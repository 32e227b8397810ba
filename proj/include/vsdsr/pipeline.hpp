#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vsdsr/config.hpp"
#include "vsdsr/metrics.hpp"

namespace vsdsr {

// Exclusive-create lock file guarding a run directory. A second command on the
// same directory fails with ConfigError while the owning process is alive; a
// lock left by a dead process is reclaimed automatically, and --force clears
// one unconditionally. Removed on destruction.
class DirLock {
  public:
    DirLock(const std::filesystem::path& dir, bool force);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

  private:
    std::filesystem::path path_;
    bool held_ = false;
};

// status.json: {"state": running|complete|failed, "stage", "error", "time"}.
void write_status(const std::filesystem::path& run_dir, const std::string& state,
                  const std::string& stage, const std::string& error = "");

// Synthesize (or ingest) the scene, write it under cfg.data_dir together with
// manifest.json listing every file with size and content hash. Refuses a
// non-empty target unless force. Returns the number of files written.
int run_generate(const RunConfig& cfg, bool force);

// Train codec + denoiser on the pretrain scene ensemble and freeze them under
// cfg.ckpt_dir with a hashes.json sidecar. Stages already on disk are skipped,
// so an interrupted pretrain resumes at the stage boundary.
void run_pretrain(const RunConfig& cfg, bool verbose);

// Fit the LR NeRF for the configured scene; skipped when field_lr.bin exists.
void run_fit_lr(const RunConfig& cfg, bool verbose);

// Full super-resolution run: lock the run dir, persist the config (a differing
// existing config aborts unless force wipes the directory), run the
// upscale/sync alternation with round-boundary resume, then evaluate into
// report.json. status.json tracks running -> complete|failed.
MetricReport run_superres(const RunConfig& cfg, bool force, bool verbose);

// Re-evaluate completed run directories. Each row that cannot be computed
// (missing artifacts, bad config) becomes a FAILED row instead of aborting the
// whole table; the reasons are appended to `failures`. Fresh report.json files
// are written into the run dirs that evaluate cleanly.
std::vector<MetricReport> run_evaluate(const std::vector<std::filesystem::path>& run_dirs,
                                       std::vector<std::string>* failures = nullptr);

// Table rows from existing report.json files only (no recompute).
std::vector<MetricReport> read_reports(const std::vector<std::filesystem::path>& run_dirs,
                                       std::vector<std::string>* failures = nullptr);

} // namespace vsdsr
