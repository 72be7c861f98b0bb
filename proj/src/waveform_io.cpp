#include "emtgis/emtkernel.hpp"
#include "emtgis/error.hpp"
#include "emtgis/powerflow.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

namespace emtgis::emt {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'T', 'W'};
constexpr std::uint16_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary waveform I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw Error(ErrorCode::ParseError, "truncated waveform record");
    }
    return v;
}

}  // namespace

void write_waveforms_csv(const std::vector<Waveform>& waves, std::ostream& out) {
    out << "time";
    std::size_t n = 0;
    for (const auto& w : waves) {
        out << ',' << w.probe;
        n = std::max(n, w.samples.size());
    }
    out << '\n';
    if (waves.empty()) {
        return;
    }
    for (std::size_t k = 0; k < n; ++k) {
        out << format_double(waves.front().time(k));
        for (const auto& w : waves) {
            out << ',';
            if (k < w.samples.size()) {
                out << format_double(w.samples[k]);
            }
        }
        out << '\n';
    }
}

void write_waveforms_binary(const std::vector<Waveform>& waves, std::ostream& out) {
    out.write(kMagic, 4);
    put<std::uint16_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(waves.size()));
    for (const auto& w : waves) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(w.probe.size()));
        out.write(w.probe.data(), static_cast<std::streamsize>(w.probe.size()));
        put<double>(out, w.t0);
        put<double>(out, w.dt);
        put<std::uint64_t>(out, w.samples.size());
    }
    for (const auto& w : waves) {
        out.write(reinterpret_cast<const char*>(w.samples.data()),
                  static_cast<std::streamsize>(w.samples.size() * sizeof(double)));
    }
}

std::vector<Waveform> read_waveforms_binary(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw Error(ErrorCode::ParseError, "not an EMTW waveform record");
    }
    if (get<std::uint16_t>(in) != kVersion) {
        throw Error(ErrorCode::ParseError, "unsupported EMTW version");
    }
    const auto count = get<std::uint32_t>(in);
    std::vector<Waveform> waves(count);
    std::vector<std::uint64_t> sizes(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(in);
        waves[i].probe.resize(len);
        if (!in.read(waves[i].probe.data(), len)) {
            throw Error(ErrorCode::ParseError, "truncated waveform record");
        }
        waves[i].t0 = get<double>(in);
        waves[i].dt = get<double>(in);
        sizes[i] = get<std::uint64_t>(in);
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        waves[i].samples.resize(sizes[i]);
        if (!in.read(reinterpret_cast<char*>(waves[i].samples.data()),
                     static_cast<std::streamsize>(sizes[i] * sizeof(double)))) {
            throw Error(ErrorCode::ParseError, "truncated waveform record");
        }
    }
    return waves;
}

}  // namespace emtgis::emt
