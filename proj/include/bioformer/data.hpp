// Recording storage, sliding-window extraction, session splits, and the
// synthetic sEMG-like generator used for desk-scale end-to-end runs.
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "bioformer/tensor.hpp"

namespace bioformer {

struct Recording {
    int subject = 0;
    int session = 1;  // 1..10
    int sample_rate = 2000;
    Tensor samples;   // fp32 [T x channels]
    std::vector<std::uint8_t> labels;  // per sample, 0 = rest, 1..7 = grasps

    int channels() const { return samples.cols(); }
    std::int64_t length() const { return samples.rows(); }
    void validate() const;  // label length/range, session range
};

struct WindowMeta {
    int subject = 0;
    int session = 0;
    std::int64_t start = 0;  // sample index of the window start
};

// Extracted windows, stored flat: window i occupies rows
// [i*window_len, (i+1)*window_len) of the sample buffer.
struct WindowDataset {
    int window_len = 300;
    int channels = 14;
    std::vector<float> samples;
    std::vector<std::uint8_t> labels;
    std::vector<WindowMeta> meta;

    std::size_t size() const { return labels.size(); }
    Tensor window(std::size_t i) const;  // [window_len x channels]
    // Unique id used by the train/test split audit.
    std::uint64_t window_id(std::size_t i) const;
    void append(const WindowDataset& other);  // shapes must match
};

// Majority: most frequent per-sample label, ties resolved by the label at
// the window center. Center: label at the window center unconditionally.
enum class LabelRule { Majority, Center };

// Starts at 0, slide, 2*slide, ...; count = floor((T-win)/slide) + 1.
// A recording shorter than one window yields an empty dataset.
WindowDataset extract_windows(const Recording& rec, int win = 300,
                              int slide = 30,
                              LabelRule rule = LabelRule::Majority);

// Partitions by session id. Sets must be disjoint; windows whose session is
// in neither set are dropped (the reference protocol covers all ten).
std::pair<WindowDataset, WindowDataset> split_sessions(
    const WindowDataset& ds, const std::set<int>& train_sessions,
    const std::set<int>& test_sessions);

struct SyntheticSpec {
    int subjects = 4;
    int sessions = 10;
    int reps_per_gesture = 12;
    double gesture_seconds = 6.0;  // per repetition, followed by rest
    double rest_seconds = 2.0;
    int sample_rate = 2000;
    int channels = 14;
    int num_gestures = 7;  // gesture ids 1..num_gestures; 0 is rest
    std::uint64_t seed = 0;
};

// Deterministic generator: gesture g drives the channel pair
// {2(g-1), 2(g-1)+1} hard while the rest of the channels carry weak
// background noise; rest segments are near-silent everywhere. Per-subject
// channel gains and per-session drift mimic electrode variability. Uses
// only +,-,*,/ and the portable Rng, so output is bit-identical across
// platforms for a fixed spec.
std::vector<Recording> generate_synthetic(const SyntheticSpec& spec);

enum class RecFormat { BinV1, Csv };

// bin-v1: magic "SEMG", version u16, subject u16, session u8, channels u8,
// sample_rate u32, T u64, dtype u8 (0=int16, 1=fp32), T*channels samples
// little-endian, then T label bytes.
// csv: header row, one sample per line, channels then label as last column.
Recording import_recording(const std::string& path, RecFormat fmt);
void export_recording(const std::string& path, const Recording& rec,
                      RecFormat fmt, bool as_int16 = false);

}  // namespace bioformer
