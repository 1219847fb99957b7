#include "dctts/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace dctts {

AudioConfig AudioConfig::from(const Config& cfg) {
    AudioConfig a;
    a.sample_rate = static_cast<int>(cfg.get_int("audio.sample_rate", a.sample_rate));
    a.fft_size = static_cast<int>(cfg.get_int("audio.fft_size", a.fft_size));
    a.win_length = static_cast<int>(cfg.get_int("audio.win_length", a.win_length));
    a.hop_length = static_cast<int>(cfg.get_int("audio.hop_length", a.hop_length));
    a.mel_channels = static_cast<int>(cfg.get_int("audio.mel_channels", a.mel_channels));
    a.fmin = cfg.get_double("audio.fmin", a.fmin);
    a.fmax = cfg.get_double("audio.fmax", a.fmax);
    a.mag_floor = cfg.get_double("audio.mag_floor", a.mag_floor);
    a.log_min = cfg.get_double("audio.log_min", a.log_min);
    a.log_max = cfg.get_double("audio.log_max", a.log_max);
    if (a.hop_length <= 0 || a.fft_size <= 0 || (a.fft_size & (a.fft_size - 1)) != 0)
        throw ConfigError("audio: fft_size must be a power of two and hop positive");
    return a;
}

namespace fft {

namespace {

void transform(std::vector<std::complex<double>>& a, bool invert) {
    const size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw UsageError("fft size must be a power of two");
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * M_PI / static_cast<double>(len) * (invert ? 1.0 : -1.0);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (invert)
        for (auto& x : a) x /= static_cast<double>(n);
}

}  // namespace

void forward(std::vector<std::complex<double>>& a) { transform(a, false); }
void inverse(std::vector<std::complex<double>>& a) { transform(a, true); }

}  // namespace fft

namespace {

std::vector<double> hann_window(int n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
    return w;
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// reflect without repeating the boundary sample
double sample_reflected(const std::vector<double>& x, int64_t i) {
    const int64_t n = static_cast<int64_t>(x.size());
    if (n == 1) return x[0];
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return x[static_cast<size_t>(i)];
}

// solve A x = b for SPD A via Cholesky, in place
void cholesky_solve(std::vector<double>& a, int n, std::vector<double>& b) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<size_t>(i) * n + j];
            for (int k = 0; k < j; ++k)
                s -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
            if (i == j) {
                if (s <= 0.0) throw NumericError("filterbank normal matrix is not positive definite");
                a[static_cast<size_t>(i) * n + j] = std::sqrt(s);
            } else {
                a[static_cast<size_t>(i) * n + j] = s / a[static_cast<size_t>(j) * n + j];
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        double s = b[static_cast<size_t>(i)];
        for (int k = 0; k < i; ++k) s -= a[static_cast<size_t>(i) * n + k] * b[static_cast<size_t>(k)];
        b[static_cast<size_t>(i)] = s / a[static_cast<size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = b[static_cast<size_t>(i)];
        for (int k = i + 1; k < n; ++k) s -= a[static_cast<size_t>(k) * n + i] * b[static_cast<size_t>(k)];
        b[static_cast<size_t>(i)] = s / a[static_cast<size_t>(i) * n + i];
    }
}

}  // namespace

MelFilterbank::MelFilterbank(const AudioConfig& cfg) {
    const int bins = cfg.fft_size / 2 + 1;
    const int mels = cfg.mel_channels;
    weights_ = Tensor::zeros({mels, bins});
    centers_.resize(static_cast<size_t>(mels));

    const double mel_lo = hz_to_mel(cfg.fmin);
    const double mel_hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges(static_cast<size_t>(mels) + 2);
    for (int i = 0; i < mels + 2; ++i)
        edges[static_cast<size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (mels + 1));
    for (int m = 0; m < mels; ++m) centers_[static_cast<size_t>(m)] = edges[static_cast<size_t>(m) + 1];

    for (int m = 0; m < mels; ++m) {
        const double lo = edges[static_cast<size_t>(m)];
        const double mid = edges[static_cast<size_t>(m) + 1];
        const double hi = edges[static_cast<size_t>(m) + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
            double w = 0.0;
            if (f > lo && f < hi) w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
            weights_.at(m, k) = std::max(0.0, w);
        }
    }

}

// Lawson-Hanson nonnegative least squares per frame. Each FFT bin feeds at
// most two triangles, so the normal-equation entries are O(1) dots and the
// active set stays small; solutions are sparse, which keeps tones at their
// true bins instead of smearing them to filter centers.
int64_t MelFilterbank::lift(const Tensor& mel_mag, Tensor& linear_mag) const {
    const int mels = weights_.dim(0), bins = weights_.dim(1);
    if (mel_mag.dim(0) != mels) throw InputError("mel to linear lift: channel mismatch");
    const int frames = mel_mag.dim(1);
    linear_mag = Tensor::zeros({bins, frames});
    int64_t clamped = 0;

    // per-column sparse view: rows (at most 2) with nonzero weight
    std::vector<std::array<int, 2>> col_rows(static_cast<size_t>(bins), {-1, -1});
    std::vector<std::array<double, 2>> col_vals(static_cast<size_t>(bins), {0.0, 0.0});
    std::vector<double> col_norm2(static_cast<size_t>(bins), 0.0);
    for (int k = 0; k < bins; ++k) {
        int slot = 0;
        for (int m = 0; m < mels && slot < 2; ++m) {
            const double w = weights_.at(m, k);
            if (w > 0.0) {
                col_rows[static_cast<size_t>(k)][static_cast<size_t>(slot)] = m;
                col_vals[static_cast<size_t>(k)][static_cast<size_t>(slot)] = w;
                col_norm2[static_cast<size_t>(k)] += w * w;
                ++slot;
            }
        }
    }

    std::vector<double> b(static_cast<size_t>(mels));
    std::vector<double> resid(static_cast<size_t>(mels));
    std::vector<int> passive;
    std::vector<double> x(static_cast<size_t>(bins));
    std::vector<double> normal;  // passive-set normal matrix, row-major
    std::vector<double> rhs, z;

    auto col_dot_vec = [&](int k, const std::vector<double>& v) {
        double s = 0.0;
        for (int slot = 0; slot < 2; ++slot) {
            const int m = col_rows[static_cast<size_t>(k)][static_cast<size_t>(slot)];
            if (m >= 0) s += col_vals[static_cast<size_t>(k)][static_cast<size_t>(slot)] * v[static_cast<size_t>(m)];
        }
        return s;
    };
    auto col_dot_col = [&](int a, int c) {
        double s = 0.0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                const int mi = col_rows[static_cast<size_t>(a)][static_cast<size_t>(i)];
                const int mj = col_rows[static_cast<size_t>(c)][static_cast<size_t>(j)];
                if (mi >= 0 && mi == mj)
                    s += col_vals[static_cast<size_t>(a)][static_cast<size_t>(i)] *
                         col_vals[static_cast<size_t>(c)][static_cast<size_t>(j)];
            }
        return s;
    };

    for (int t = 0; t < frames; ++t) {
        double bnorm = 0.0;
        for (int m = 0; m < mels; ++m) {
            b[static_cast<size_t>(m)] = mel_mag.at(m, t);
            bnorm = std::max(bnorm, std::fabs(b[static_cast<size_t>(m)]));
        }
        std::fill(x.begin(), x.end(), 0.0);
        passive.clear();
        resid = b;
        const double tol = 1e-12 * std::max(1.0, bnorm);

        auto solve_passive = [&]() {
            const int p = static_cast<int>(passive.size());
            normal.assign(static_cast<size_t>(p) * p, 0.0);
            rhs.assign(static_cast<size_t>(p), 0.0);
            for (int i = 0; i < p; ++i) {
                rhs[static_cast<size_t>(i)] = col_dot_vec(passive[static_cast<size_t>(i)], b);
                for (int j = 0; j <= i; ++j) {
                    const double v = col_dot_col(passive[static_cast<size_t>(i)], passive[static_cast<size_t>(j)]);
                    normal[static_cast<size_t>(i) * p + j] = v;
                    normal[static_cast<size_t>(j) * p + i] = v;
                }
                normal[static_cast<size_t>(i) * p + i] += 1e-14;
            }
            z = rhs;
            cholesky_solve(normal, p, z);
        };

        for (int outer = 0; outer < 4 * mels; ++outer) {
            // most-violating column by gradient of the residual
            int best = -1;
            double best_w = tol;
            for (int k = 0; k < bins; ++k) {
                if (x[static_cast<size_t>(k)] > 0.0 || col_norm2[static_cast<size_t>(k)] == 0.0) continue;
                const double w = col_dot_vec(k, resid);
                if (w > best_w) {
                    best_w = w;
                    best = k;
                }
            }
            if (best < 0) break;
            passive.push_back(best);
            solve_passive();
            // inner loop: back off until the passive solution is nonnegative
            while (true) {
                double alpha = 1.0;
                bool any_neg = false;
                for (size_t i = 0; i < passive.size(); ++i) {
                    if (z[i] <= 0.0) {
                        any_neg = true;
                        const double xi = x[static_cast<size_t>(passive[i])];
                        alpha = std::min(alpha, xi / (xi - z[i]));
                    }
                }
                if (!any_neg) break;
                for (size_t i = 0; i < passive.size(); ++i) {
                    const int k = passive[i];
                    x[static_cast<size_t>(k)] += alpha * (z[i] - x[static_cast<size_t>(k)]);
                }
                std::vector<int> kept;
                for (size_t i = 0; i < passive.size(); ++i)
                    if (x[static_cast<size_t>(passive[i])] > tol)
                        kept.push_back(passive[i]);
                    else
                        x[static_cast<size_t>(passive[i])] = 0.0;
                passive = kept;
                if (passive.empty()) break;
                solve_passive();
            }
            for (size_t i = 0; i < passive.size(); ++i) x[static_cast<size_t>(passive[i])] = z[i];
            // refresh residual
            resid = b;
            for (size_t i = 0; i < passive.size(); ++i) {
                const int k = passive[i];
                for (int slot = 0; slot < 2; ++slot) {
                    const int m = col_rows[static_cast<size_t>(k)][static_cast<size_t>(slot)];
                    if (m >= 0)
                        resid[static_cast<size_t>(m)] -=
                            col_vals[static_cast<size_t>(k)][static_cast<size_t>(slot)] * x[static_cast<size_t>(k)];
                }
            }
        }
        for (int k = 0; k < bins; ++k) {
            if (x[static_cast<size_t>(k)] < 0.0) {
                x[static_cast<size_t>(k)] = 0.0;
                ++clamped;
            }
            linear_mag.at(k, t) = x[static_cast<size_t>(k)];
        }
    }
    return clamped;
}

Tensor stft_magnitude(const Waveform& w, const AudioConfig& cfg) {
    if (w.samples.empty()) throw InputError("stft: empty waveform");
    const int bins = cfg.fft_size / 2 + 1;
    const int frames = 1 + static_cast<int>(w.samples.size()) / cfg.hop_length;
    const auto window = hann_window(cfg.win_length);
    Tensor mag({bins, frames});
    std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.fft_size));
    const int half = cfg.fft_size / 2;
    for (int t = 0; t < frames; ++t) {
        for (int i = 0; i < cfg.win_length; ++i) {
            const int64_t pos = static_cast<int64_t>(t) * cfg.hop_length - half + i;
            buf[static_cast<size_t>(i)] = sample_reflected(w.samples, pos) * window[static_cast<size_t>(i)];
        }
        for (int i = cfg.win_length; i < cfg.fft_size; ++i) buf[static_cast<size_t>(i)] = 0.0;
        fft::forward(buf);
        for (int k = 0; k < bins; ++k) mag.at(k, t) = std::abs(buf[static_cast<size_t>(k)]);
    }
    return mag;
}

MelSpectrogram mel_spectrogram(const Waveform& w, const AudioConfig& cfg) {
    if (w.samples.empty()) throw InputError("mel_spectrogram: empty waveform");
    const Tensor mag = stft_magnitude(w, cfg);
    const MelFilterbank fb(cfg);
    const int mels = cfg.mel_channels, frames = mag.dim(1), bins = mag.dim(0);

    MelSpectrogram out;
    out.hop_length = cfg.hop_length;
    out.win_length = cfg.win_length;
    out.fft_size = cfg.fft_size;
    out.values = Tensor::zeros({mels, frames});
    const double span = cfg.log_max - cfg.log_min;
    for (int m = 0; m < mels; ++m)
        for (int t = 0; t < frames; ++t) {
            double s = 0.0;
            for (int k = 0; k < bins; ++k) s += fb.weights().at(m, k) * mag.at(k, t);
            double lm = std::log(std::max(s, cfg.mag_floor));
            lm = std::min(cfg.log_max, std::max(cfg.log_min, lm));
            out.values.at(m, t) = 2.0 * (lm - cfg.log_min) / span - 1.0;
        }
    return out;
}

Tensor mel_to_magnitude(const MelSpectrogram& m, const AudioConfig& cfg) {
    Tensor mag(m.values.dims);
    const double span = cfg.log_max - cfg.log_min;
    for (int64_t i = 0; i < mag.numel(); ++i) {
        const double lm = cfg.log_min + (m.values.data[i] + 1.0) * 0.5 * span;
        mag.data[i] = std::exp(lm);
    }
    return mag;
}

namespace {

// least-squares inverse STFT over the un-cropped domain [(frames-1)*hop + win]
std::vector<double> istft_ls(const std::vector<std::vector<std::complex<double>>>& spec,
                             const std::vector<double>& window, int hop, int fft_size) {
    const int frames = static_cast<int>(spec.size());
    const int win = static_cast<int>(window.size());
    const int64_t len = static_cast<int64_t>(frames - 1) * hop + win;
    std::vector<double> num(static_cast<size_t>(len), 0.0);
    std::vector<double> den(static_cast<size_t>(len), 0.0);
    std::vector<std::complex<double>> buf(static_cast<size_t>(fft_size));
    const int bins = fft_size / 2 + 1;
    for (int t = 0; t < frames; ++t) {
        for (int k = 0; k < bins; ++k) buf[static_cast<size_t>(k)] = spec[static_cast<size_t>(t)][static_cast<size_t>(k)];
        for (int k = bins; k < fft_size; ++k)
            buf[static_cast<size_t>(k)] = std::conj(spec[static_cast<size_t>(t)][static_cast<size_t>(fft_size - k)]);
        fft::inverse(buf);
        const int64_t off = static_cast<int64_t>(t) * hop;
        for (int i = 0; i < win; ++i) {
            num[static_cast<size_t>(off + i)] += window[static_cast<size_t>(i)] * buf[static_cast<size_t>(i)].real();
            den[static_cast<size_t>(off + i)] += window[static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
        }
    }
    for (int64_t i = 0; i < len; ++i)
        num[static_cast<size_t>(i)] = den[static_cast<size_t>(i)] > 1e-12
                                          ? num[static_cast<size_t>(i)] / den[static_cast<size_t>(i)]
                                          : 0.0;
    return num;
}

}  // namespace

Waveform griffin_lim(const MelSpectrogram& m, int iterations, const AudioConfig& cfg, GriffinLimStats* stats) {
    if (iterations < 1) throw InputError("griffin_lim: iterations must be >= 1");
    const MelFilterbank fb(cfg);
    const Tensor mel_mag = mel_to_magnitude(m, cfg);
    Tensor target;  // [bins, frames]
    const int64_t clamped = fb.lift(mel_mag, target);
    if (stats) stats->clamped_negative = clamped;

    const int bins = target.dim(0), frames = target.dim(1);
    const auto window = hann_window(cfg.win_length);

    double target_norm = 0.0;
    for (double v : target.data) target_norm += v * v;
    target_norm = std::sqrt(std::max(target_norm, 1e-300));

    // zero initial phase
    std::vector<std::vector<std::complex<double>>> spec(
        static_cast<size_t>(frames), std::vector<std::complex<double>>(static_cast<size_t>(bins)));
    for (int t = 0; t < frames; ++t)
        for (int k = 0; k < bins; ++k) spec[static_cast<size_t>(t)][static_cast<size_t>(k)] = target.at(k, t);

    std::vector<double> x = istft_ls(spec, window, cfg.hop_length, cfg.fft_size);
    std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.fft_size));

    for (int it = 0; it < iterations; ++it) {
        double err = 0.0;
        for (int t = 0; t < frames; ++t) {
            const int64_t off = static_cast<int64_t>(t) * cfg.hop_length;
            for (int i = 0; i < cfg.win_length; ++i)
                buf[static_cast<size_t>(i)] = x[static_cast<size_t>(off + i)] * window[static_cast<size_t>(i)];
            for (int i = cfg.win_length; i < cfg.fft_size; ++i) buf[static_cast<size_t>(i)] = 0.0;
            fft::forward(buf);
            for (int k = 0; k < bins; ++k) {
                const std::complex<double> v = buf[static_cast<size_t>(k)];
                const double amp = std::abs(v);
                const double d = amp - target.at(k, t);
                err += d * d;
                spec[static_cast<size_t>(t)][static_cast<size_t>(k)] =
                    amp > 1e-300 ? v * (target.at(k, t) / amp) : std::complex<double>(target.at(k, t), 0.0);
            }
        }
        if (stats) stats->objective.push_back(std::sqrt(err) / target_norm);
        x = istft_ls(spec, window, cfg.hop_length, cfg.fft_size);
    }

    // crop back to the centered-analysis coordinate frame
    Waveform out;
    out.sample_rate = cfg.sample_rate;
    const int64_t want = static_cast<int64_t>(frames) * cfg.hop_length - 1;
    const int64_t off = cfg.fft_size / 2;
    out.samples.resize(static_cast<size_t>(want), 0.0);
    for (int64_t i = 0; i < want; ++i) {
        const int64_t src = off + i;
        if (src < static_cast<int64_t>(x.size())) out.samples[static_cast<size_t>(i)] = x[static_cast<size_t>(src)];
    }
    for (double& s : out.samples) s = std::min(1.0, std::max(-1.0, s));
    return out;
}

}  // namespace dctts
