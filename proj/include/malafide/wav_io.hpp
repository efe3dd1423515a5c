#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "malafide/error.hpp"
#include "malafide/waveform.hpp"

namespace malafide {

namespace detail {

inline std::uint32_t read_le32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint16_t read_le16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

inline void put_le32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_le16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

inline void put_tag(std::vector<unsigned char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

} // namespace detail

/// Encodes 16-bit PCM mono RIFF/WAVE bytes; samples are clipped to [-1, 1].
inline std::vector<unsigned char> encode_wav(const Waveform& wave) {
    const auto n = static_cast<std::uint32_t>(wave.size());
    std::vector<unsigned char> out;
    out.reserve(44 + 2 * static_cast<std::size_t>(n));
    detail::put_tag(out, "RIFF");
    detail::put_le32(out, 36 + 2 * n);
    detail::put_tag(out, "WAVE");
    detail::put_tag(out, "fmt ");
    detail::put_le32(out, 16);
    detail::put_le16(out, 1); // PCM
    detail::put_le16(out, 1); // mono
    detail::put_le32(out, static_cast<std::uint32_t>(wave.sample_rate()));
    detail::put_le32(out, static_cast<std::uint32_t>(wave.sample_rate()) * 2);
    detail::put_le16(out, 2);
    detail::put_le16(out, 16);
    detail::put_tag(out, "data");
    detail::put_le32(out, 2 * n);
    for (double x : wave.samples()) {
        const double clipped = std::clamp(x, -1.0, 1.0);
        const auto q = static_cast<std::int16_t>(std::clamp(std::lround(clipped * 32768.0), -32768L, 32767L));
        detail::put_le16(out, static_cast<std::uint16_t>(q));
    }
    return out;
}

inline Waveform decode_wav(const std::vector<unsigned char>& bytes) {
    using detail::read_le16;
    using detail::read_le32;
    auto tag_is = [&](std::size_t at, const char* tag) {
        return at + 4 <= bytes.size() && std::equal(tag, tag + 4, bytes.begin() + static_cast<std::ptrdiff_t>(at));
    };
    if (!tag_is(0, "RIFF") || !tag_is(8, "WAVE"))
        throw ValidationError("malformed WAV header: missing RIFF/WAVE tag");

    bool have_fmt = false;
    std::uint16_t channels = 0;
    std::uint32_t sample_rate = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t chunk_size = read_le32(&bytes[pos + 4]);
        const std::size_t body = pos + 8;
        if (body + chunk_size > bytes.size())
            throw ValidationError("malformed WAV header: chunk size exceeds file length");
        if (tag_is(pos, "fmt ")) {
            if (chunk_size < 16)
                throw ValidationError("malformed WAV header: fmt chunk too short");
            const std::uint16_t format = read_le16(&bytes[body]);
            channels = read_le16(&bytes[body + 2]);
            sample_rate = read_le32(&bytes[body + 4]);
            const std::uint16_t bits = read_le16(&bytes[body + 14]);
            if (format != 1)
                throw ValidationError("unsupported audio format " + std::to_string(format) + " (only PCM is supported)");
            if (channels != 1)
                throw ValidationError("unsupported channel count " + std::to_string(channels) + " (only mono is supported)");
            if (bits != 16)
                throw ValidationError("unsupported bits per sample " + std::to_string(bits) + " (only 16-bit is supported)");
            if (sample_rate == 0)
                throw ValidationError("malformed WAV header: sample rate is zero");
            have_fmt = true;
        } else if (tag_is(pos, "data")) {
            if (!have_fmt)
                throw ValidationError("malformed WAV header: data chunk precedes fmt chunk");
            if (chunk_size % 2 != 0 || chunk_size == 0)
                throw ValidationError("malformed WAV header: data size " + std::to_string(chunk_size) +
                                      " is not a positive multiple of 2");
            std::vector<double> samples(chunk_size / 2);
            for (std::size_t i = 0; i < samples.size(); ++i)
                samples[i] = static_cast<std::int16_t>(read_le16(&bytes[body + 2 * i])) / 32768.0;
            return Waveform(std::move(samples), static_cast<int>(sample_rate));
        }
        pos = body + chunk_size + (chunk_size & 1u);
    }
    throw ValidationError("malformed WAV header: no data chunk");
}

inline Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ValidationError("cannot open WAV file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_wav(bytes);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline void write_wav(const std::filesystem::path& path, const Waveform& wave) {
    const auto bytes = encode_wav(wave);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw ValidationError("cannot write WAV file " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw ValidationError("failed writing WAV file " + path.string());
}

} // namespace malafide
