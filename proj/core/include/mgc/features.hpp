// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "mgc/tensor.hpp"

namespace mgc::features {

inline constexpr double kSampleRate = 16000.0;
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kHopSize = 256;
inline constexpr std::size_t kMelBands = 48;
inline constexpr double kLogFloor = 1e-10;

struct AudioBuffer {
    std::vector<double> samples;  // mono, in [-1, 1]
    double sample_rate = kSampleRate;
};

/// Reads a RIFF/WAVE PCM-16 file (mono, or stereo averaged to mono), scaling by 1/32768.
AudioBuffer load_wav(const std::filesystem::path& path);
/// Writes mono PCM-16. Samples are clipped to [-1, 1) and rounded.
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

/// Band-limited resampling with a Hann-windowed sinc kernel of 32 zero
/// crossings per side at the lower of the two rates. Output length is
/// round(n * target / source); kernel weights are renormalized per output
/// sample so constants are preserved exactly up to rounding.
AudioBuffer resample(const AudioBuffer& audio, double target_rate = kSampleRate);

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// Power spectrogram [win/2 + 1, T] of un-padded Hann-windowed frames;
/// T = floor((len - win) / hop) + 1.
Tensor stft_power(const AudioBuffer& audio, std::size_t win = kFftSize, std::size_t hop = kHopSize);

/// HTK mel scale: m = 2595 log10(1 + f / 700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct MelFilterbank {
    Tensor weights;  // [n_mels, fft/2 + 1]
    std::vector<std::size_t> peak_bins;
    std::size_t fft_size = kFftSize;
    double sample_rate = kSampleRate;
};

/// Triangular filters on n_mels + 2 mel-equispaced edge points in
/// [f_lo, f_hi]. Edges are snapped to the nearest FFT bin so every triangle
/// peaks at exactly 1 on its center bin; no area normalization.
MelFilterbank mel_filterbank(std::size_t n_mels = kMelBands, std::size_t fft_size = kFftSize,
                             double sample_rate = kSampleRate, double f_lo = 0.0, double f_hi = 8000.0);

struct MelSpectrogram {
    Tensor values;  // [n_mels, T], natural-log power
    std::string source;
    std::size_t sample_offset = 0;

    std::size_t n_mels() const { return values.dim(0); }
    std::size_t frames() const { return values.dim(1); }
};

/// ln(max(fb * power, 1e-10)).
MelSpectrogram log_mel(const Tensor& power, const MelFilterbank& fb);

/// Full pipeline: resample to 16 kHz if needed, STFT, 48-band log-mel.
MelSpectrogram extract(const AudioBuffer& audio);

}  // namespace mgc::features
