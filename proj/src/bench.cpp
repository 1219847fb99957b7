#include "dctts/bench.hpp"

#include "dctts/tensor_io.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace dctts {

namespace fs = std::filesystem;

BenchReport bench_mrtf(const MelGenerator& generate, const std::vector<std::string>& texts, int steps,
                       int repeats, const AudioConfig& acfg, const std::string& artifact_dir,
                       int threads) {
    if (repeats < 3) throw InputError("bench: repeats must be >= 3");
    if (texts.empty()) throw InputError("bench: no texts");
    if (threads < 1) throw InputError("bench: threads must be >= 1");
    if (!artifact_dir.empty()) fs::create_directories(artifact_dir);

    using Clock = std::chrono::steady_clock;
    std::vector<double> times;
    double audio_seconds = 0.0;
    std::vector<MelSpectrogram> produced(texts.size());
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        if (threads == 1) {
            for (size_t i = 0; i < texts.size(); ++i)
                produced[i] = generate(texts[i], steps, 1000 + r * 131 + static_cast<uint64_t>(i));
        } else {
            // inference over frozen parameters is thread-safe; the seed is a
            // pure function of (repeat, text index), so the outputs match the
            // single-threaded run exactly
            std::vector<std::thread> pool;
            std::atomic<size_t> next{0};
            const int workers = std::min<int>(threads, static_cast<int>(texts.size()));
            for (int w = 0; w < workers; ++w)
                pool.emplace_back([&]() {
                    for (size_t i = next.fetch_add(1); i < texts.size(); i = next.fetch_add(1))
                        produced[i] = generate(texts[i], steps, 1000 + r * 131 + static_cast<uint64_t>(i));
                });
            for (std::thread& th : pool) th.join();
        }
        const auto t1 = Clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
        double audio = 0.0;
        for (const MelSpectrogram& mel : produced)
            audio += static_cast<double>(mel.frames()) * acfg.hop_length / acfg.sample_rate;
        audio_seconds = audio;
        if (!artifact_dir.empty())  // outside the timed section
            for (size_t i = 0; i < produced.size(); ++i)
                tensor_io::save(artifact_dir + "/mel_r" + std::to_string(r) + "_" + std::to_string(i) +
                                    ".dct1",
                                produced[i].values);
    }
    std::sort(times.begin(), times.end());
    const double median = times[times.size() / 2];
    if (audio_seconds <= 0.0) throw NumericError("bench: generator produced zero audio");

    BenchReport report;
    report.wall_seconds = median;
    report.audio_seconds = audio_seconds;
    report.mrtf = audio_seconds / median;
    report.steps = steps;
    report.hardware = hardware_note();
    return report;
}

void write_bench_csv(const BenchReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write bench csv: " + path);
    out << "mrtf,wall_seconds,audio_seconds,params,gflops,steps,end_to_end_rtf,hardware\n";
    out.precision(10);
    out << report.mrtf << ',' << report.wall_seconds << ',' << report.audio_seconds << ','
        << report.parameter_count << ',' << report.gflops << ',' << report.steps << ','
        << report.end_to_end_rtf << ',' << report.hardware << "\n";
}

void write_run_report(const std::string& run_dir) {
    const fs::path dir(run_dir);
    // canonical metrics table: copy of the stage-2 loss curve with the fixed
    // column order; header-only when there is no run yet
    std::vector<std::string> rows;
    {
        std::ifstream in(dir / "losses.csv");
        std::string line;
        bool first = true;
        while (in && std::getline(in, line)) {
            if (first) {
                first = false;  // skip the stored header, we own the column order
                continue;
            }
            if (!line.empty()) rows.push_back(line);
        }
    }
    {
        std::ofstream out(dir / "metrics.csv");
        if (!out) throw ConfigError("cannot write metrics.csv in " + run_dir);
        out << "step,vlb,tcll,acoustic,total\n";
        for (const std::string& row : rows) out << row << "\n";
    }

    std::ostringstream text;
    text << "run report: " << run_dir << "\n";
    text << "stage-2 steps logged: " << rows.size() << "\n";
    if (!rows.empty()) {
        text << "first: " << rows.front() << "\n";
        text << "last:  " << rows.back() << "\n";
    }
    for (const char* name : {"bench.csv", "stage1_losses.csv", "schedule.csv"}) {
        if (fs::exists(dir / name)) {
            text << name << ": present\n";
            if (std::string(name) == "bench.csv") {
                std::ifstream in(dir / name);
                std::string header, row;
                std::getline(in, header);
                while (std::getline(in, row))
                    if (!row.empty()) text << "  " << row << "\n";
            }
        }
    }
    std::ofstream out(dir / "report.txt");
    out << text.str();
}

std::string hardware_note() {
    std::string cpu = "unknown cpu";
    std::ifstream info("/proc/cpuinfo");
    std::string line;
    while (info && std::getline(info, line)) {
        if (line.rfind("model name", 0) == 0) {
            const size_t colon = line.find(':');
            if (colon != std::string::npos) cpu = line.substr(colon + 2);
            break;
        }
    }
    std::replace(cpu.begin(), cpu.end(), ',', ' ');
    return cpu + " / " + std::to_string(std::thread::hardware_concurrency()) + " threads";
}

}  // namespace dctts
