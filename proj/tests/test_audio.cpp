#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "dctts/audio.hpp"
#include "dctts/tensor_io.hpp"

using namespace dctts;

namespace {

Waveform sine(double freq, double seconds, double amp = 1.0, int sr = 22050) {
    Waveform w;
    w.sample_rate = sr;
    const int n = static_cast<int>(seconds * sr);
    w.samples.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        w.samples[static_cast<size_t>(i)] = amp * std::sin(2.0 * M_PI * freq * i / sr);
    return w;
}

int dominant_fft_bin(const std::vector<double>& x, int nfft) {
    std::vector<std::complex<double>> buf(static_cast<size_t>(nfft), 0.0);
    for (int i = 0; i < nfft && i < static_cast<int>(x.size()); ++i) buf[static_cast<size_t>(i)] = x[static_cast<size_t>(i)];
    fft::forward(buf);
    int best = 1;
    double best_mag = 0.0;
    for (int k = 1; k < nfft / 2; ++k) {
        const double m = std::abs(buf[static_cast<size_t>(k)]);
        if (m > best_mag) {
            best_mag = m;
            best = k;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("mel: framing arithmetic gives 80 x 87 for one second at 22050") {
    const AudioConfig cfg;
    const MelSpectrogram m = mel_spectrogram(sine(440.0, 1.0), cfg);
    CHECK(m.channels() == 80);
    CHECK(m.frames() == 87);
}

TEST_CASE("mel: silence sits at the normalized floor -1") {
    const AudioConfig cfg;
    Waveform w;
    w.samples.assign(4096, 0.0);
    const MelSpectrogram m = mel_spectrogram(w, cfg);
    for (double v : m.values.data) CHECK(v == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("mel: empty waveform is an input error") {
    const AudioConfig cfg;
    Waveform w;
    CHECK_THROWS_AS(mel_spectrogram(w, cfg), InputError);
}

TEST_CASE("mel: 440 Hz tone peaks in the filter whose band contains 440 Hz") {
    const AudioConfig cfg;
    const MelFilterbank fb(cfg);
    const MelSpectrogram m = mel_spectrogram(sine(440.0, 1.0), cfg);
    // oracle: the filterbank center frequencies bracketing 440 Hz
    const auto& centers = fb.center_freqs_hz();
    const int t = m.frames() / 2;
    int argmax = 0;
    for (int c = 1; c < m.channels(); ++c)
        if (m.values.at(c, t) > m.values.at(argmax, t)) argmax = c;
    // the winning channel's band [center[m-1], center[m+1]] must contain 440
    const double lo = argmax > 0 ? centers[static_cast<size_t>(argmax) - 1] : 0.0;
    const double hi = argmax + 1 < m.channels() ? centers[static_cast<size_t>(argmax) + 1] : cfg.fmax;
    CHECK(lo <= 440.0);
    CHECK(hi >= 440.0);
}

TEST_CASE("mel: values stay inside [-1, 1] for extreme inputs") {
    const AudioConfig cfg;
    Waveform loud = sine(1000.0, 0.5, 1.0);
    const MelSpectrogram m = mel_spectrogram(loud, cfg);
    for (double v : m.values.data) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("mel: shift by exactly one hop moves interior frames by one") {
    const AudioConfig cfg;
    Waveform w = sine(523.0, 0.4, 0.8);
    Waveform delayed;
    delayed.sample_rate = w.sample_rate;
    delayed.samples.assign(static_cast<size_t>(cfg.hop_length), 0.0);
    delayed.samples.insert(delayed.samples.end(), w.samples.begin(), w.samples.end());
    const MelSpectrogram a = mel_spectrogram(w, cfg);
    const MelSpectrogram b = mel_spectrogram(delayed, cfg);
    for (int t = 3; t < a.frames() - 3; ++t)
        for (int c = 0; c < 80; ++c)
            CHECK(b.values.at(c, t + 1) == doctest::Approx(a.values.at(c, t)).epsilon(1e-9));
}

TEST_CASE("filterbank: rows nonnegative, unimodal, finite, positive area") {
    const AudioConfig cfg;
    const MelFilterbank fb(cfg);
    const Tensor& w = fb.weights();
    REQUIRE(w.dim(0) == 80);
    REQUIRE(w.dim(1) == 513);
    for (int m = 0; m < 80; ++m) {
        double area = 0.0;
        int sign_changes = 0;
        double prev_delta = 0.0;
        for (int k = 0; k < 513; ++k) {
            const double v = w.at(m, k);
            CHECK(v >= 0.0);
            CHECK(std::isfinite(v));
            area += v;
            if (k > 0) {
                const double delta = v - w.at(m, k - 1);
                if (delta * prev_delta < 0.0) ++sign_changes;
                if (delta != 0.0) prev_delta = delta;
            }
        }
        CHECK(area > 0.0);
        CHECK(sign_changes <= 1);  // one rise, one fall
    }
}

TEST_CASE("griffin-lim: all-floor mel reconstructs near-silence") {
    const AudioConfig cfg;
    MelSpectrogram m;
    m.values = Tensor::full({80, 40}, -1.0);
    const Waveform w = griffin_lim(m, 8, cfg);
    double peak = 0.0;
    for (double s : w.samples) peak = std::max(peak, std::fabs(s));
    CHECK(peak < 1e-3);
}

TEST_CASE("griffin-lim: objective non-increasing over 32 iterations") {
    const AudioConfig cfg;
    const MelSpectrogram m = mel_spectrogram(sine(660.0, 0.5, 0.7), cfg);
    GriffinLimStats stats;
    griffin_lim(m, 32, cfg, &stats);
    REQUIRE(stats.objective.size() == 32);
    for (size_t i = 1; i < stats.objective.size(); ++i)
        CHECK(stats.objective[i] <= stats.objective[i - 1] + 1e-10);
}

TEST_CASE("griffin-lim: sine reconstruction lands in the right FFT bin") {
    const AudioConfig cfg;
    const Waveform src = sine(440.0, 1.0, 0.8);
    const MelSpectrogram m = mel_spectrogram(src, cfg);
    const Waveform rec = griffin_lim(m, 100, cfg);
    // frozen oracle: the source tone itself peaks at bin 327 of a 16384-point
    // FFT (440 * 16384 / 22050 = 326.9)
    const int src_bin = dominant_fft_bin(src.samples, 16384);
    CHECK(src_bin == 327);
    const int rec_bin = dominant_fft_bin(rec.samples, 16384);
    CHECK(std::abs(rec_bin - src_bin) <= 1);
}

TEST_CASE("griffin-lim: round trip preserves the per-frame argmax channel for pure tones") {
    const AudioConfig cfg;
    const MelSpectrogram m = mel_spectrogram(sine(880.0, 0.4, 0.8), cfg);
    const Waveform rec = griffin_lim(m, 32, cfg);
    const MelSpectrogram m2 = mel_spectrogram(rec, cfg);
    const int frames = std::min(m.frames(), m2.frames());
    for (int t = 3; t < frames - 3; ++t) {
        int a = 0, b = 0;
        for (int c = 1; c < 80; ++c) {
            if (m.values.at(c, t) > m.values.at(a, t)) a = c;
            if (m2.values.at(c, t) > m2.values.at(b, t)) b = c;
        }
        CHECK(a == b);
    }
}

TEST_CASE("wav io: 16-bit mono PCM round trip") {
    const Waveform w = sine(330.0, 0.2, 0.5);
    const std::string path = "/tmp/dctts_test.wav";
    wav::write(path, w);
    const Waveform r = wav::read(path);
    CHECK(r.sample_rate == w.sample_rate);
    REQUIRE(r.samples.size() == w.samples.size());
    for (size_t i = 0; i < w.samples.size(); ++i)
        CHECK(std::fabs(r.samples[i] - w.samples[i]) < 1.0 / 32000.0);
    std::remove(path.c_str());
}

TEST_CASE("tensor io: DCT1 round trip, token io: DCTK round trip") {
    Tensor t({3, 4});
    for (int64_t i = 0; i < t.numel(); ++i) t.data[static_cast<size_t>(i)] = 0.25 * static_cast<double>(i) - 1.0;
    const std::string path = "/tmp/dctts_test.dct1";
    tensor_io::save(path, t);
    const Tensor r = tensor_io::load(path);
    CHECK(r.dims == t.dims);
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(r.data[static_cast<size_t>(i)] == t.data[static_cast<size_t>(i)]);
    std::remove(path.c_str());

    TokenGridFile grid;
    grid.f = 2;
    grid.l = 3;
    grid.vocab = 16;
    grid.indices = {0, 5, 15, 3, 2, 9};
    const std::string tpath = "/tmp/dctts_test.dctk";
    token_io::save(tpath, grid);
    const TokenGridFile rg = token_io::load(tpath);
    CHECK(rg.f == 2);
    CHECK(rg.l == 3);
    CHECK(rg.vocab == 16);
    CHECK(rg.indices == grid.indices);
    std::remove(tpath.c_str());
}
