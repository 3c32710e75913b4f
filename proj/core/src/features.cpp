// SPDX-License-Identifier: Apache-2.0
#include "mgc/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <memory>
#include <numbers>

#include "mgc/errors.hpp"

namespace mgc::features {

namespace {

std::uint16_t read_u16(const std::vector<unsigned char>& b, std::size_t at) {
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t read_u32(const std::vector<unsigned char>& b, std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
           (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

[[noreturn]] void wav_error(const std::filesystem::path& path, std::size_t offset, const std::string& what) {
    throw FormatError(path.string() + ": " + what + " at byte offset " + std::to_string(offset));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

// Owns an FFTW real-to-complex plan and its buffers.
class RealFft {
   public:
    explicit RealFft(std::size_t n)
        : n_(n),
          in_(fftw_alloc_real(n), fftw_free),
          out_(fftw_alloc_complex(n / 2 + 1), fftw_free),
          plan_(fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE),
                fftw_destroy_plan) {
        if (!plan_) {
            throw Error("fftw: failed to create a length-" + std::to_string(n) + " plan");
        }
    }

    double* input() { return in_.get(); }
    const fftw_complex* output() const { return out_.get(); }
    void execute() { fftw_execute(plan_.get()); }

   private:
    std::size_t n_;
    std::unique_ptr<double, decltype(&fftw_free)> in_;
    std::unique_ptr<fftw_complex, decltype(&fftw_free)> out_;
    std::unique_ptr<std::remove_pointer_t<fftw_plan>, decltype(&fftw_destroy_plan)> plan_;
};

}  // namespace

// ---------------------------------------------------------------------------
// WAV

AudioBuffer load_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(path.string() + ": cannot open file");
    }
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12) wav_error(path, bytes.size(), "truncated RIFF header");
    if (std::string(bytes.begin(), bytes.begin() + 4) != "RIFF") wav_error(path, 0, "missing RIFF magic");
    if (std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE") wav_error(path, 8, "missing WAVE tag");

    bool have_fmt = false;
    std::uint16_t channels = 0;
    std::uint16_t bits = 0;
    std::uint32_t rate = 0;
    std::size_t offset = 12;
    while (offset + 8 <= bytes.size()) {
        const std::string id(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                             bytes.begin() + static_cast<std::ptrdiff_t>(offset + 4));
        const std::uint32_t size = read_u32(bytes, offset + 4);
        const std::size_t body = offset + 8;
        if (body + size > bytes.size() && id != "data") {
            wav_error(path, offset, "truncated '" + id + "' chunk");
        }
        if (id == "fmt ") {
            if (size < 16) wav_error(path, body, "fmt chunk too small");
            std::uint16_t format = read_u16(bytes, body);
            channels = read_u16(bytes, body + 2);
            rate = read_u32(bytes, body + 4);
            bits = read_u16(bytes, body + 14);
            if (format == kFormatExtensible && size >= 26) {
                format = read_u16(bytes, body + 24);
            }
            if (format != kFormatPcm) {
                wav_error(path, body, "unsupported audio format " + std::to_string(format) + " (PCM required)");
            }
            if (bits != 16) wav_error(path, body + 14, "unsupported bit depth " + std::to_string(bits));
            if (channels != 1 && channels != 2) {
                wav_error(path, body + 2, "unsupported channel count " + std::to_string(channels));
            }
            if (rate == 0) wav_error(path, body + 4, "zero sample rate");
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) wav_error(path, offset, "data chunk before fmt chunk");
            if (body + size > bytes.size()) {
                wav_error(path, bytes.size(), "truncated data chunk (declared " + std::to_string(size) + " bytes)");
            }
            const std::size_t frame_bytes = 2u * channels;
            if (size % frame_bytes != 0) wav_error(path, body + size, "partial sample frame");
            const std::size_t frames = size / frame_bytes;
            if (frames == 0) wav_error(path, body, "no audio samples");
            AudioBuffer audio;
            audio.sample_rate = rate;
            audio.samples.resize(frames);
            for (std::size_t f = 0; f < frames; ++f) {
                double acc = 0.0;
                for (std::size_t c = 0; c < channels; ++c) {
                    const auto raw = static_cast<std::int16_t>(read_u16(bytes, body + f * frame_bytes + 2 * c));
                    acc += static_cast<double>(raw) / 32768.0;
                }
                audio.samples[f] = acc / static_cast<double>(channels);
            }
            return audio;
        }
        offset = body + size + (size & 1u);
    }
    wav_error(path, bytes.size(), have_fmt ? "missing data chunk" : "missing fmt chunk");
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
    const auto n = static_cast<std::uint32_t>(audio.samples.size());
    const auto rate = static_cast<std::uint32_t>(std::lround(audio.sample_rate));
    std::string out = "RIFF";
    put_u32(out, 36 + 2 * n);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, kFormatPcm);
    put_u16(out, 1);
    put_u32(out, rate);
    put_u32(out, rate * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out += "data";
    put_u32(out, 2 * n);
    for (double s : audio.samples) {
        const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0))));
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file.write(out.data(), static_cast<std::streamsize>(out.size()))) {
        throw DataError(path.string() + ": write failed");
    }
}

// ---------------------------------------------------------------------------
// Resampling

AudioBuffer resample(const AudioBuffer& audio, double target_rate) {
    if (target_rate < 8000.0) {
        throw DomainError("resample: target rate must be >= 8000 Hz");
    }
    if (audio.sample_rate == target_rate) {
        return audio;
    }
    constexpr double kZeroCrossings = 32.0;
    const double ratio = target_rate / audio.sample_rate;
    const double cutoff = std::min(1.0, ratio);
    const double half_width = kZeroCrossings / cutoff;  // in input samples
    const auto n_in = static_cast<std::ptrdiff_t>(audio.samples.size());
    const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));

    AudioBuffer out;
    out.sample_rate = target_rate;
    out.samples.resize(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
        const double center = static_cast<double>(i) / ratio;
        const auto first = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(center - half_width)));
        const auto last = std::min<std::ptrdiff_t>(n_in - 1, static_cast<std::ptrdiff_t>(std::floor(center + half_width)));
        double acc = 0.0;
        double norm = 0.0;
        for (std::ptrdiff_t n = first; n <= last; ++n) {
            const double x = center - static_cast<double>(n);
            const double u = cutoff * x;
            const double sinc = u == 0.0 ? 1.0 : std::sin(std::numbers::pi * u) / (std::numbers::pi * u);
            const double window = 0.5 * (1.0 + std::cos(std::numbers::pi * x / half_width));
            const double w = sinc * window;
            acc += w * audio.samples[static_cast<std::size_t>(n)];
            norm += w;
        }
        out.samples[i] = norm != 0.0 ? acc / norm : 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// STFT

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
    return w;
}

Tensor stft_power(const AudioBuffer& audio, std::size_t win, std::size_t hop) {
    if (win == 0 || hop == 0) {
        throw DomainError("stft: window and hop must be positive");
    }
    if (audio.samples.size() < win) {
        throw DataError("stft: audio has " + std::to_string(audio.samples.size()) +
                        " samples, at least " + std::to_string(win) + " required");
    }
    const std::size_t frames = (audio.samples.size() - win) / hop + 1;
    const std::size_t bins = win / 2 + 1;
    const std::vector<double> window = hann_window(win);
    RealFft fft(win);
    Tensor power({bins, frames});
    for (std::size_t t = 0; t < frames; ++t) {
        const double* frame = audio.samples.data() + t * hop;
        for (std::size_t i = 0; i < win; ++i) {
            fft.input()[i] = frame[i] * window[i];
        }
        fft.execute();
        const fftw_complex* spec = fft.output();
        for (std::size_t k = 0; k < bins; ++k) {
            power.at(k, t) = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
        }
    }
    return power;
}

// ---------------------------------------------------------------------------
// Mel

double hz_to_mel(double hz) {
    if (hz < 0.0) {
        throw DomainError("hz_to_mel: negative frequency " + std::to_string(hz));
    }
    return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel) {
    if (mel < 0.0) {
        throw DomainError("mel_to_hz: negative mel value " + std::to_string(mel));
    }
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank mel_filterbank(std::size_t n_mels, std::size_t fft_size, double sample_rate, double f_lo,
                             double f_hi) {
    if (n_mels == 0) throw DomainError("mel_filterbank: n_mels must be >= 1");
    if (!(f_lo < f_hi) || f_hi > sample_rate / 2.0) {
        throw DomainError("mel_filterbank: need 0 <= f_lo < f_hi <= sample_rate / 2");
    }
    const std::size_t bins = fft_size / 2 + 1;
    const double mel_lo = hz_to_mel(f_lo);
    const double mel_hi = hz_to_mel(f_hi);
    std::vector<std::size_t> edges(n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1);
        const double hz = mel_to_hz(mel);
        edges[i] = static_cast<std::size_t>(std::lround(hz * static_cast<double>(fft_size) / sample_rate));
        if (i > 0 && edges[i] <= edges[i - 1]) {
            throw DomainError("mel_filterbank: " + std::to_string(n_mels) + " bands exceed the frequency resolution of a " +
                              std::to_string(fft_size) + "-point FFT");
        }
    }
    MelFilterbank fb;
    fb.fft_size = fft_size;
    fb.sample_rate = sample_rate;
    fb.weights = Tensor({n_mels, bins});
    for (std::size_t m = 0; m < n_mels; ++m) {
        const std::size_t left = edges[m];
        const std::size_t center = edges[m + 1];
        const std::size_t right = edges[m + 2];
        for (std::size_t k = left + 1; k < right && k < bins; ++k) {
            fb.weights.at(m, k) = k <= center
                                      ? static_cast<double>(k - left) / static_cast<double>(center - left)
                                      : static_cast<double>(right - k) / static_cast<double>(right - center);
        }
        fb.peak_bins.push_back(center);
    }
    return fb;
}

MelSpectrogram log_mel(const Tensor& power, const MelFilterbank& fb) {
    const std::size_t n_mels = fb.weights.dim(0);
    const std::size_t bins = fb.weights.dim(1);
    if (power.rank() != 2 || power.dim(0) != bins) {
        throw ShapeError("log_mel: power " + shape_to_string(power.shape()) + " does not match filterbank " +
                         shape_to_string(fb.weights.shape()));
    }
    const std::size_t frames = power.dim(1);
    MelSpectrogram out;
    out.values = Tensor({n_mels, frames});
    for (std::size_t m = 0; m < n_mels; ++m) {
        for (std::size_t t = 0; t < frames; ++t) {
            double acc = 0.0;
            for (std::size_t k = 0; k < bins; ++k) {
                acc += fb.weights.at(m, k) * power.at(k, t);
            }
            out.values.at(m, t) = std::log(std::max(acc, kLogFloor));
        }
    }
    return out;
}

MelSpectrogram extract(const AudioBuffer& audio) {
    static const MelFilterbank fb = mel_filterbank();
    const AudioBuffer at16k = audio.sample_rate == kSampleRate ? audio : resample(audio, kSampleRate);
    return log_mel(stft_power(at16k), fb);
}

}  // namespace mgc::features
