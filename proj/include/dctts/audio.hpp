#pragma once

#include <complex>
#include <vector>

#include "dctts/config.hpp"
#include "dctts/tensor.hpp"

namespace dctts {

struct Waveform {
    std::vector<double> samples;  // in [-1, 1]
    int sample_rate = 22050;

    double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// 80-channel normalized log-mel grid, values in [-1, 1], stored [channels, frames].
struct MelSpectrogram {
    Tensor values;
    int hop_length = 256;
    int win_length = 1024;
    int fft_size = 1024;

    int channels() const { return values.dim(0); }
    int frames() const { return values.dim(1); }
};

struct AudioConfig {
    int sample_rate = 22050;
    int fft_size = 1024;
    int win_length = 1024;
    int hop_length = 256;
    int mel_channels = 80;
    double fmin = 0.0;
    double fmax = 8000.0;
    double mag_floor = 1e-5;  // magnitude floor before the natural log
    double log_min = -11.5;   // normalization range for log magnitudes
    double log_max = 6.0;

    static AudioConfig from(const Config& cfg);
};

class MelFilterbank {
public:
    explicit MelFilterbank(const AudioConfig& cfg);

    const Tensor& weights() const { return weights_; }  // [mels, fft/2+1]
    const std::vector<double>& center_freqs_hz() const { return centers_; }
    // least-squares lift mel magnitudes -> linear magnitudes, negatives
    // clamped to zero; returns the clamp count
    int64_t lift(const Tensor& mel_mag, Tensor& linear_mag) const;

private:
    Tensor weights_;
    std::vector<double> centers_;
};

namespace fft {
// in-place radix-2 complex FFT; size must be a power of two
void forward(std::vector<std::complex<double>>& a);
void inverse(std::vector<std::complex<double>>& a);
}  // namespace fft

// magnitude STFT with centered reflect padding; frames = 1 + len/hop
Tensor stft_magnitude(const Waveform& w, const AudioConfig& cfg);

MelSpectrogram mel_spectrogram(const Waveform& w, const AudioConfig& cfg);

// invert the [-1,1] normalization back to linear mel magnitudes
Tensor mel_to_magnitude(const MelSpectrogram& m, const AudioConfig& cfg);

struct GriffinLimStats {
    std::vector<double> objective;  // spectral convergence per iteration
    int64_t clamped_negative = 0;
};

Waveform griffin_lim(const MelSpectrogram& m, int iterations, const AudioConfig& cfg,
                     GriffinLimStats* stats = nullptr);

namespace wav {
void write(const std::string& path, const Waveform& w);
Waveform read(const std::string& path);
}  // namespace wav

}  // namespace dctts
