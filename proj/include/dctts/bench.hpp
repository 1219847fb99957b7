#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dctts/audio.hpp"

namespace dctts {

struct BenchReport {
    double mrtf = 0.0;            // audio seconds per mel-generation second
    double wall_seconds = 0.0;    // median timed mel-generation wall time
    double audio_seconds = 0.0;   // seconds of speech produced per repeat
    int64_t parameter_count = 0;
    double gflops = 0.0;          // estimate for one inference pass over the texts
    int steps = 0;                // diffusion steps used
    double end_to_end_rtf = 0.0;  // includes waveform inversion; 0 when not measured
    std::string hardware;
};

// mel generator under test: (text, diffusion steps, seed) -> mel
using MelGenerator = std::function<MelSpectrogram(const std::string&, int, uint64_t)>;

// times mel generation only (text encoding + diffusion + vq decode); the
// waveform stage is excluded from the timed section. repeats >= 3, median.
// when artifact_dir is set, generated mels are persisted after each repeat's
// timed section closes, never inside it. threads > 1 spreads texts across
// workers for timing only; generation is pure per (text, seed), so outputs
// are identical at any thread count.
BenchReport bench_mrtf(const MelGenerator& generate, const std::vector<std::string>& texts, int steps,
                       int repeats, const AudioConfig& acfg, const std::string& artifact_dir = "",
                       int threads = 1);

void write_bench_csv(const BenchReport& report, const std::string& path);

// aggregates a run directory: canonical metrics.csv + human-readable
// report.txt; idempotent over its own outputs
void write_run_report(const std::string& run_dir);

std::string hardware_note();

}  // namespace dctts
