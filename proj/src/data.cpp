#include "bioformer/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bioformer/error.hpp"
#include "bioformer/rng.hpp"

namespace bioformer {

void Recording::validate() const {
    if (session < 1 || session > 10)
        throw ConfigError("session must be in [1,10], got " +
                          std::to_string(session));
    if (samples.dtype != DType::F32 || samples.ndim() != 2)
        throw ShapeError("recording samples must be a 2-D fp32 tensor");
    if (labels.size() != static_cast<std::size_t>(length()))
        throw ShapeError("labels length " + std::to_string(labels.size()) +
                         " != sample count " + std::to_string(length()));
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] > 7)
            throw ParseError("label " + std::to_string(int(labels[i])) +
                             " out of range at sample " + std::to_string(i));
}

Tensor WindowDataset::window(std::size_t i) const {
    Tensor w = Tensor::f32({window_len, channels});
    const std::size_t stride = std::size_t(window_len) * channels;
    std::memcpy(w.f.data(), samples.data() + i * stride, stride * sizeof(float));
    return w;
}

std::uint64_t WindowDataset::window_id(std::size_t i) const {
    const auto& m = meta[i];
    return (std::uint64_t(std::uint32_t(m.subject)) << 40) |
           (std::uint64_t(std::uint8_t(m.session)) << 32) |
           std::uint64_t(std::uint32_t(m.start));
}

void WindowDataset::append(const WindowDataset& other) {
    if (other.window_len != window_len || other.channels != channels)
        throw ShapeError("cannot append datasets with different window shapes");
    samples.insert(samples.end(), other.samples.begin(), other.samples.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    meta.insert(meta.end(), other.meta.begin(), other.meta.end());
}

WindowDataset extract_windows(const Recording& rec, int win, int slide,
                              LabelRule rule) {
    rec.validate();
    if (win <= 0 || slide <= 0)
        throw ConfigError("window and slide must be positive");
    WindowDataset ds;
    ds.window_len = win;
    ds.channels = rec.channels();
    const std::int64_t T = rec.length();
    if (T < win) return ds;  // shorter than one window: empty dataset

    const std::int64_t count = (T - win) / slide + 1;
    ds.samples.reserve(std::size_t(count) * win * ds.channels);
    ds.labels.reserve(std::size_t(count));
    ds.meta.reserve(std::size_t(count));
    std::array<int, 8> hist{};
    for (std::int64_t k = 0; k < count; ++k) {
        const std::int64_t start = k * slide;
        const float* src =
            rec.samples.f.data() + std::size_t(start) * ds.channels;
        ds.samples.insert(ds.samples.end(), src,
                          src + std::size_t(win) * ds.channels);
        std::uint8_t label;
        const std::uint8_t center = rec.labels[std::size_t(start + win / 2)];
        if (rule == LabelRule::Center) {
            label = center;
        } else {
            hist.fill(0);
            for (int t = 0; t < win; ++t) ++hist[rec.labels[std::size_t(start + t)]];
            int best = 0;
            for (int c = 1; c < 8; ++c)
                if (hist[c] > hist[best]) best = c;
            // Ties go to the center label (transition windows).
            label = static_cast<std::uint8_t>(
                hist[center] == hist[best] ? center : best);
        }
        ds.labels.push_back(label);
        ds.meta.push_back({rec.subject, rec.session, start});
    }
    return ds;
}

std::pair<WindowDataset, WindowDataset> split_sessions(
    const WindowDataset& ds, const std::set<int>& train_sessions,
    const std::set<int>& test_sessions) {
    for (int s : train_sessions)
        if (test_sessions.count(s))
            throw ConfigError("session " + std::to_string(s) +
                              " appears in both train and test sets");
    WindowDataset train, test;
    train.window_len = test.window_len = ds.window_len;
    train.channels = test.channels = ds.channels;
    const std::size_t stride = std::size_t(ds.window_len) * ds.channels;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        WindowDataset* dst = nullptr;
        if (train_sessions.count(ds.meta[i].session)) dst = &train;
        else if (test_sessions.count(ds.meta[i].session)) dst = &test;
        if (!dst) continue;
        const float* src = ds.samples.data() + i * stride;
        dst->samples.insert(dst->samples.end(), src, src + stride);
        dst->labels.push_back(ds.labels[i]);
        dst->meta.push_back(ds.meta[i]);
    }
    return {std::move(train), std::move(test)};
}

namespace {

// splitmix64-style mixing to derive independent per-recording seeds.
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, int subject, int session) {
    return mix64(mix64(seed ^ std::uint64_t(subject) * 0x100000001B3ull) ^
                 std::uint64_t(session));
}

// Channel amplitude for a given label: strong on the gesture's channel
// pair, weak background elsewhere, near-silent at rest.
float base_amp(int label, int ch) {
    if (label == 0) return 0.08f;
    const int lo = 2 * (label - 1);
    return (ch == lo || ch == lo + 1) ? 1.6f : 0.25f;
}

}  // namespace

std::vector<Recording> generate_synthetic(const SyntheticSpec& sp) {
    if (sp.subjects < 1) throw ConfigError("need at least one subject");
    if (sp.sessions < 1 || sp.sessions > 10)
        throw ConfigError("sessions must be in [1,10]");
    if (sp.reps_per_gesture < 1) throw ConfigError("need at least one repetition");
    if (sp.num_gestures < 1 || sp.num_gestures > 7)
        throw ConfigError("num_gestures must be in [1,7]");
    if (sp.channels < 2 * sp.num_gestures)
        throw ConfigError("need at least 2 channels per gesture");
    if (!(sp.gesture_seconds > 0.0) || sp.rest_seconds < 0.0)
        throw ConfigError("bad segment durations");

    const int n_gest = int(sp.gesture_seconds * sp.sample_rate);
    const int n_rest = int(sp.rest_seconds * sp.sample_rate);
    const int ch = sp.channels;

    std::vector<Recording> out;
    out.reserve(std::size_t(sp.subjects) * sp.sessions);
    for (int subject = 1; subject <= sp.subjects; ++subject) {
        // Per-subject channel gains with a touch of neighbor leakage
        // (electrode placement mixes adjacent channels slightly).
        Rng rs(derive_seed(sp.seed, subject, 0));
        std::vector<float> base(static_cast<std::size_t>(ch)), gain(static_cast<std::size_t>(ch));
        for (int c = 0; c < ch; ++c) base[c] = 1.0f + 0.12f * rs.gaussian();
        for (int c = 0; c < ch; ++c)
            gain[c] = 0.9f * base[c] + 0.1f * base[(c + 1) % ch];

        for (int session = 1; session <= sp.sessions; ++session) {
            Rng rng(derive_seed(sp.seed, subject, session));
            std::vector<float> drift(static_cast<std::size_t>(ch));
            for (int c = 0; c < ch; ++c)
                drift[c] = 1.0f + 0.06f * rng.gaussian();

            // Segment plan: reps x (gesture g for n_gest, rest for n_rest).
            std::vector<std::pair<int, int>> segments;  // (label, length)
            for (int rep = 0; rep < sp.reps_per_gesture; ++rep)
                for (int g = 1; g <= sp.num_gestures; ++g) {
                    segments.emplace_back(g, n_gest);
                    if (n_rest > 0) segments.emplace_back(0, n_rest);
                }
            std::int64_t total = 0;
            for (const auto& s : segments) total += s.second;

            Recording rec;
            rec.subject = subject;
            rec.session = session;
            rec.sample_rate = sp.sample_rate;
            rec.samples = Tensor::f32({int(total), ch});
            rec.labels.resize(std::size_t(total));

            // One-pole lowpass per channel shapes the white noise into a
            // band-limited hum; amplitude ramps avoid segment-boundary
            // discontinuities.
            std::vector<float> lp(static_cast<std::size_t>(ch), 0.0f);
            std::vector<float> prev_amp(static_cast<std::size_t>(ch), 0.0f);
            std::int64_t t0 = 0;
            for (const auto& [label, len] : segments) {
                const int ramp = std::min(200, len / 5 + 1);
                for (int t = 0; t < len; ++t) {
                    const float blend =
                        t < ramp ? float(t + 1) / float(ramp) : 1.0f;
                    float* row = rec.samples.f.data() + std::size_t(t0 + t) * ch;
                    for (int c = 0; c < ch; ++c) {
                        const float target =
                            base_amp(label, c) * gain[c] * drift[c];
                        const float amp =
                            prev_amp[c] + (target - prev_amp[c]) * blend;
                        lp[c] = 0.3f * rng.gaussian() + 0.7f * lp[c];
                        row[c] = 2.0f * amp * lp[c];
                    }
                    rec.labels[std::size_t(t0 + t)] =
                        static_cast<std::uint8_t>(label);
                }
                for (int c = 0; c < ch; ++c)
                    prev_amp[c] = base_amp(label, c) * gain[c] * drift[c];
                t0 += len;
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

namespace {

template <typename T>
T read_le(std::ifstream& in, const std::string& path, std::size_t& offset) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in)
        throw ParseError(path + ": truncated at byte " + std::to_string(offset));
    offset += sizeof(T);
    return v;
}

Recording import_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::size_t offset = 0;
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SEMG", 4) != 0)
        throw ParseError(path + ": bad magic at byte 0");
    offset = 4;
    const auto version = read_le<std::uint16_t>(in, path, offset);
    if (version != 1)
        throw ParseError(path + ": unsupported version " +
                         std::to_string(version));
    Recording rec;
    rec.subject = read_le<std::uint16_t>(in, path, offset);
    rec.session = read_le<std::uint8_t>(in, path, offset);
    const int ch = read_le<std::uint8_t>(in, path, offset);
    rec.sample_rate = static_cast<int>(read_le<std::uint32_t>(in, path, offset));
    const auto T = read_le<std::uint64_t>(in, path, offset);
    const auto dtype_tag = read_le<std::uint8_t>(in, path, offset);
    if (ch == 0) throw ParseError(path + ": zero channels at byte 8");
    if (T == 0 || T > (1ull << 32))
        throw ParseError(path + ": implausible sample count " +
                         std::to_string(T));
    if (dtype_tag > 1)
        throw ParseError(path + ": bad dtype tag at byte " +
                         std::to_string(offset - 1));
    rec.samples = Tensor::f32({int(T), ch});
    if (dtype_tag == 0) {
        std::vector<std::int16_t> raw(std::size_t(T) * ch);
        in.read(reinterpret_cast<char*>(raw.data()),
                static_cast<std::streamsize>(raw.size() * 2));
        if (!in)
            throw ParseError(path + ": truncated sample data at byte " +
                             std::to_string(offset));
        offset += raw.size() * 2;
        for (std::size_t i = 0; i < raw.size(); ++i)
            rec.samples.f[i] = float(raw[i]);
    } else {
        in.read(reinterpret_cast<char*>(rec.samples.f.data()),
                static_cast<std::streamsize>(rec.samples.f.size() * 4));
        if (!in)
            throw ParseError(path + ": truncated sample data at byte " +
                             std::to_string(offset));
        offset += rec.samples.f.size() * 4;
    }
    rec.labels.resize(std::size_t(T));
    in.read(reinterpret_cast<char*>(rec.labels.data()),
            static_cast<std::streamsize>(T));
    if (!in)
        throw ParseError(path + ": truncated labels at byte " +
                         std::to_string(offset));
    rec.validate();
    return rec;
}

Recording import_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line))
        throw ParseError(path + ": empty file (missing header)");
    int columns = 1;
    for (char c : line)
        if (c == ',') ++columns;
    if (columns < 2)
        throw ParseError(path + ": header must list channels and a label");
    const int ch = columns - 1;

    std::vector<float> samples;
    std::vector<std::uint8_t> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int col = 0;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str())
                throw ParseError(path + ": bad number '" + cell + "' at line " +
                                 std::to_string(line_no));
            if (col < ch) {
                samples.push_back(float(v));
            } else {
                if (v < 0 || v > 7 || v != std::floor(v))
                    throw ParseError(path + ": bad label '" + cell +
                                     "' at line " + std::to_string(line_no));
                labels.push_back(static_cast<std::uint8_t>(v));
            }
            ++col;
        }
        if (col != columns)
            throw ParseError(path + ": expected " + std::to_string(columns) +
                             " columns, got " + std::to_string(col) +
                             " at line " + std::to_string(line_no));
    }
    if (labels.empty()) throw ParseError(path + ": no data rows");
    Recording rec;
    rec.samples = Tensor::f32({int(labels.size()), ch});
    rec.samples.f = std::move(samples);
    rec.labels = std::move(labels);
    rec.validate();
    return rec;
}

}  // namespace

Recording import_recording(const std::string& path, RecFormat fmt) {
    return fmt == RecFormat::BinV1 ? import_bin(path) : import_csv(path);
}

void export_recording(const std::string& path, const Recording& rec,
                      RecFormat fmt, bool as_int16) {
    rec.validate();
    const std::string tmp = path + ".tmp";
    if (fmt == RecFormat::BinV1) {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out.write("SEMG", 4);
        auto put = [&](auto v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
        put(std::uint16_t{1});
        put(std::uint16_t(rec.subject));
        put(std::uint8_t(rec.session));
        put(std::uint8_t(rec.channels()));
        put(std::uint32_t(rec.sample_rate));
        put(std::uint64_t(rec.length()));
        put(std::uint8_t(as_int16 ? 0 : 1));
        if (as_int16) {
            for (float v : rec.samples.f) {
                const long r = std::lround(v);
                put(std::int16_t(std::clamp<long>(r, -32768, 32767)));
            }
        } else {
            out.write(reinterpret_cast<const char*>(rec.samples.f.data()),
                      static_cast<std::streamsize>(rec.samples.f.size() * 4));
        }
        out.write(reinterpret_cast<const char*>(rec.labels.data()),
                  static_cast<std::streamsize>(rec.labels.size()));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp);
    } else {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        for (int c = 0; c < rec.channels(); ++c) out << "ch" << c << ",";
        out << "label\n";
        char buf[64];
        for (std::int64_t t = 0; t < rec.length(); ++t) {
            for (int c = 0; c < rec.channels(); ++c) {
                // %.9g round-trips any float exactly.
                std::snprintf(buf, sizeof buf, "%.9g,", double(rec.samples.at(int(t), c)));
                out << buf;
            }
            out << int(rec.labels[std::size_t(t)]) << "\n";
        }
        out.flush();
        if (!out) throw IoError("write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("cannot rename " + tmp + " to " + path);
}

}  // namespace bioformer
