// Command-line front end over the library: synthetic data generation,
// recording import, two-stage training, quantization, per-session
// evaluation, and the analytic cost profiler.
//
// Every command that produces files also writes a JSON manifest next to
// its primary output (<output>.manifest.json) capturing the command, the
// effective configuration, the seed, content hashes of every input file
// and the list of outputs — enough to re-derive any reported number from
// the repository alone. Outputs are written to a temp name and renamed, so
// a failed run never leaves partial files behind.
#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bioformer/checkpoint.hpp"
#include "bioformer/data.hpp"
#include "bioformer/error.hpp"
#include "bioformer/model.hpp"
#include "bioformer/profile.hpp"
#include "bioformer/quant.hpp"
#include "bioformer/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bioformer;

namespace {

constexpr const char* kToolVersion = "1.0.0";

// --- manifest plumbing ------------------------------------------------

std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for hashing");
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a 64
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016" PRIx64, h);
    return out;
}

void atomic_write_text(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw IoError("short write to " + tmp);
    }
    fs::rename(tmp, path);
}

// Accumulated while a command runs; flushed as JSON at the very end.
struct Manifest {
    std::string command;
    json config = json::object();
    std::uint64_t seed = 0;
    std::map<std::string, std::string> inputs;  // path -> content hash
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void add_input(const std::string& path) { inputs[path] = hash_file(path); }

    void write(const std::string& path) const {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        json j;
        j["command"] = command;
        j["tool_version"] = kToolVersion;
        j["seed"] = seed;
        j["config"] = config;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["wall_clock_s"] = wall;
        atomic_write_text(path, j.dump(2) + "\n");
    }
};

// --- shared flag groups -------------------------------------------------

std::uint64_t parse_seed(const std::string& s) {
    try {
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(s, &pos, 0);  // accepts 0x...
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad seed '" + s + "' (decimal or 0x hex)");
    }
}

struct ModelFlags {
    int heads = 8;
    int depth = 1;
    int filter = 10;
    int embed = 64;
    int head_dim = 32;
    int ffn = 128;
    int window = 300;
    bool no_pos = false;
    bool no_prenorm = false;
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
    cmd->add_option("--heads", mf.heads, "attention heads H")->capture_default_str();
    cmd->add_option("--depth", mf.depth, "encoder blocks d")->capture_default_str();
    cmd->add_option("--filter", mf.filter, "conv filter length F (= stride)")
        ->capture_default_str();
    cmd->add_option("--embed", mf.embed, "token dim C")->capture_default_str();
    cmd->add_option("--head-dim", mf.head_dim, "per-head dim P")->capture_default_str();
    cmd->add_option("--ffn", mf.ffn, "projection hidden width")->capture_default_str();
    cmd->add_option("--window", mf.window, "window length in samples")
        ->capture_default_str();
    cmd->add_flag("--no-pos", mf.no_pos, "disable the positional table");
    cmd->add_flag("--no-prenorm", mf.no_prenorm,
                  "bare attention blocks (no layernorm/residual)");
}

BioformerConfig make_cfg(const ModelFlags& mf, int channels) {
    BioformerConfig cfg;
    cfg.in_channels = channels;
    cfg.window_len = mf.window;
    cfg.filter = mf.filter;
    cfg.embed = mf.embed;
    cfg.heads = mf.heads;
    cfg.depth = mf.depth;
    cfg.head_dim = mf.head_dim;
    cfg.ffn_dim = mf.ffn;
    cfg.use_pos_embedding = !mf.no_pos;
    cfg.use_prenorm = !mf.no_prenorm;
    cfg.validate();
    return cfg;
}

json cfg_json(const BioformerConfig& cfg) {
    json j;
    j["in_channels"] = cfg.in_channels;
    j["window_len"] = cfg.window_len;
    j["filter"] = cfg.filter;
    j["embed"] = cfg.embed;
    j["heads"] = cfg.heads;
    j["depth"] = cfg.depth;
    j["head_dim"] = cfg.head_dim;
    j["ffn_dim"] = cfg.ffn_dim;
    j["num_classes"] = cfg.num_classes;
    j["pos_embedding"] = cfg.use_pos_embedding;
    j["prenorm"] = cfg.use_prenorm;
    return j;
}

// Loads every .semg recording under dir (sorted by path, so window order
// is reproducible) and slices them into windows.
WindowDataset load_dataset(const std::string& dir, int window, int slide,
                           Manifest& m) {
    if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".semg")
            paths.push_back(e.path().string());
    if (paths.empty()) throw IoError("no .semg recordings in " + dir);
    std::sort(paths.begin(), paths.end());

    WindowDataset all;
    bool first = true;
    for (const auto& p : paths) {
        m.add_input(p);
        const Recording rec = import_recording(p, RecFormat::BinV1);
        WindowDataset ds = extract_windows(rec, window, slide);
        if (first) {
            all = std::move(ds);
            first = false;
        } else {
            all.append(ds);
        }
    }
    if (all.size() == 0)
        throw ConfigError("recordings in " + dir +
                          " are shorter than one window");
    return all;
}

std::string manifest_path(const std::string& primary_output) {
    return primary_output + ".manifest.json";
}

void require_flag(const std::string& value, const char* flag) {
    if (value.empty())
        throw ConfigError(std::string(flag) + " is required (flag or config file)");
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Flat key=value config files. CLI11 only honours set_config on the root
// app, so subcommand files are applied by hand: each key must name one of
// the subcommand's long options, and a value only lands when the command
// line left that option untouched — flags always win.
void apply_config(CLI::App* cmd, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto where = path + ":" + std::to_string(line_no);
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(where + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || key == "config")
            throw ParseError(where + ": bad key");
        CLI::Option* op = cmd->get_option_no_throw("--" + key);
        if (op == nullptr)
            throw ConfigError(where + ": unknown key '" + key + "' for " +
                              cmd->get_name());
        if (op->count() > 0) continue;  // set on the command line
        op->add_result(value);
        op->run_callback();
    }
}


// --- gen-data -----------------------------------------------------------

struct GenArgs {
    std::string config;
    std::string out_dir;
    std::string seed = "0xB10F0";
    SyntheticSpec spec;
    bool int16 = false;
};

void cmd_gen_data(const GenArgs& a) {
    require_flag(a.out_dir, "--out");
    Manifest m;
    m.command = "gen-data";
    SyntheticSpec spec = a.spec;
    spec.seed = parse_seed(a.seed);
    m.seed = spec.seed;
    m.config = {{"subjects", spec.subjects},
                {"sessions", spec.sessions},
                {"reps_per_gesture", spec.reps_per_gesture},
                {"gesture_seconds", spec.gesture_seconds},
                {"rest_seconds", spec.rest_seconds},
                {"sample_rate", spec.sample_rate},
                {"channels", spec.channels},
                {"num_gestures", spec.num_gestures},
                {"int16", a.int16}};

    fs::create_directories(a.out_dir);
    const std::vector<Recording> recs = generate_synthetic(spec);
    for (const Recording& rec : recs) {
        char name[64];
        std::snprintf(name, sizeof(name), "sub%02d_ses%02d.semg", rec.subject,
                      rec.session);
        const std::string path = (fs::path(a.out_dir) / name).string();
        export_recording(path, rec, RecFormat::BinV1, a.int16);
        m.outputs.push_back(path);
    }
    m.write((fs::path(a.out_dir) / "manifest.json").string());
    std::printf("wrote %zu recordings to %s\n", recs.size(), a.out_dir.c_str());
}

// --- import ---------------------------------------------------------------

struct ImportArgs {
    std::string config;
    std::string in_path, out_path;
    std::string format = "csv";
    int subject = 1;
    int session = 1;
    int rate = 2000;
    bool int16 = false;
};

void cmd_import(const ImportArgs& a) {
    require_flag(a.in_path, "--in");
    require_flag(a.out_path, "--out");
    Manifest m;
    m.command = "import";
    m.add_input(a.in_path);
    m.config = {{"format", a.format}, {"subject", a.subject},
                {"session", a.session}, {"sample_rate", a.rate}};

    const RecFormat fmt = a.format == "csv" ? RecFormat::Csv : RecFormat::BinV1;
    Recording rec = import_recording(a.in_path, fmt);
    rec.subject = a.subject;
    rec.session = a.session;
    rec.sample_rate = a.rate;
    rec.validate();
    export_recording(a.out_path, rec, RecFormat::BinV1, a.int16);
    m.outputs.push_back(a.out_path);
    m.write(manifest_path(a.out_path));
    std::printf("imported %lld samples x %d channels -> %s\n",
                static_cast<long long>(rec.length()), rec.channels(),
                a.out_path.c_str());
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string data_dir, out_path;
    std::string seed = "0xB10F0";
    int subject = 0;
    int slide = 30;
    bool no_pretrain = false;
    ModelFlags mf;
    TrainConfig tc;
};

void cmd_train(const TrainArgs& a) {
    require_flag(a.data_dir, "--data");
    require_flag(a.out_path, "--out");
    if (a.subject <= 0) throw ConfigError("--subject is required");
    Manifest m;
    m.command = "train";
    const WindowDataset ds = load_dataset(a.data_dir, a.mf.window, a.slide, m);
    const BioformerConfig cfg = make_cfg(a.mf, ds.channels);

    TrainConfig tc = a.tc;
    tc.seed = parse_seed(a.seed);
    tc.validate();
    m.seed = tc.seed;
    m.config = cfg_json(cfg);
    m.config["slide"] = a.slide;
    m.config["pretrain"] = !a.no_pretrain;
    m.config["pretrain_epochs"] = tc.pretrain_epochs;
    m.config["finetune_epochs"] = tc.finetune_epochs;
    m.config["warmup_epochs"] = tc.warmup_epochs;
    m.config["pretrain_peak_lr"] = tc.pretrain_peak_lr;
    m.config["finetune_lr"] = tc.finetune_lr;
    m.config["finetune_drop_epoch"] = tc.finetune_drop_epoch;
    m.config["batch_size"] = tc.batch_size;
    m.config["subject"] = a.subject;

    std::vector<MetricsRow> metrics;
    ModelParams start;
    if (a.no_pretrain) {
        Rng rng(tc.seed);
        start = init_params(cfg, rng);
    } else {
        start = pretrain_inter_subject(ds, a.subject, cfg, tc, &metrics);
    }
    const FinetuneResult res =
        finetune_subject(start, ds, a.subject, cfg, tc, &metrics);

    save_model(a.out_path, cfg, res.params);
    const std::string metrics_path = a.out_path + ".metrics.csv";
    atomic_write_text(metrics_path, metrics_to_csv(metrics));
    m.outputs = {a.out_path, metrics_path};
    m.write(manifest_path(a.out_path));

    double mean = 0.0;
    for (const auto& [session, acc] : res.session_acc) {
        std::printf("subject %d session %d: %.2f%%\n", a.subject, session,
                    100.0 * acc);
        mean += acc;
    }
    if (!res.session_acc.empty())
        std::printf("subject %d mean: %.2f%%\n", a.subject,
                    100.0 * mean / double(res.session_acc.size()));
}

// --- quantize ---------------------------------------------------------------

struct QuantizeArgs {
    std::string config;
    std::string checkpoint, data_dir, out_path;
    std::string seed = "0xB10F0";
    int subject = 0;
    int slide = 30;
    QatConfig qc;
};

void cmd_quantize(const QuantizeArgs& a) {
    require_flag(a.checkpoint, "--checkpoint");
    require_flag(a.data_dir, "--data");
    require_flag(a.out_path, "--out");
    if (a.subject <= 0) throw ConfigError("--subject is required");
    Manifest m;
    m.command = "quantize";
    m.add_input(a.checkpoint);
    const auto [cfg, params] = load_model(a.checkpoint);
    const WindowDataset ds = load_dataset(a.data_dir, cfg.window_len, a.slide, m);
    if (ds.channels != cfg.in_channels)
        throw ConfigError("checkpoint expects " +
                          std::to_string(cfg.in_channels) +
                          " channels, dataset has " +
                          std::to_string(ds.channels));

    // Calibration + QAT on the subject's training sessions (1-5);
    // agreement is reported on the held-out sessions (6-10).
    std::vector<std::size_t> train_idx, held_idx;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.meta[i].subject != a.subject) continue;
        (ds.meta[i].session <= 5 ? train_idx : held_idx).push_back(i);
    }
    if (train_idx.empty())
        throw ConfigError("no training windows for subject " +
                          std::to_string(a.subject));

    QatConfig qc = a.qc;
    qc.seed = parse_seed(a.seed);
    m.seed = qc.seed;
    m.config = cfg_json(cfg);
    m.config["subject"] = a.subject;
    m.config["slide"] = a.slide;
    m.config["qat_epochs"] = qc.epochs;
    m.config["qat_lr"] = qc.lr;
    m.config["batch_size"] = qc.batch_size;

    const CalibrationStats stats = calibrate(params, cfg, ds, train_idx);
    ModelParams tuned = params;
    if (qc.epochs > 0) {
        qc.validate();
        tuned = qat_finetune(params, stats, cfg, ds, train_idx, qc);
    }
    const QuantizedModel qm = lower(tuned, stats, cfg);
    save_quantized(a.out_path, qm);
    m.outputs = {a.out_path};
    m.write(manifest_path(a.out_path));

    const std::vector<std::size_t>& probe = held_idx.empty() ? train_idx : held_idx;
    std::size_t agree = 0;
    for (std::size_t i : probe) {
        const Tensor w = ds.window(i);
        const int fp = predict(forward(w, tuned, cfg));
        if (fp == int_predict(qm, w)) ++agree;
    }
    std::printf("%s: int8 payload %zu bytes\n", a.out_path.c_str(),
                model_memory_bytes(qm));
    std::printf("fp32/int8 top-1 agreement: %.2f%% (%zu/%zu %s windows)\n",
                100.0 * double(agree) / double(probe.size()), agree,
                probe.size(), held_idx.empty() ? "training" : "held-out");
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string config;
    std::string checkpoint, data_dir, out_path;
    int subject = 0;
    bool all_subjects = false;
    int slide = 30;
    std::vector<int> sessions = {6, 7, 8, 9, 10};
};

void cmd_eval(const EvalArgs& a) {
    require_flag(a.checkpoint, "--checkpoint");
    require_flag(a.data_dir, "--data");
    if (!a.all_subjects && a.subject <= 0)
        throw ConfigError("--subject or --all-subjects is required");
    Manifest m;
    m.command = "eval";
    m.add_input(a.checkpoint);
    if (a.sessions.empty()) throw ConfigError("session set is empty");

    const CheckpointData cd = load_checkpoint(a.checkpoint);
    const WindowDataset ds =
        load_dataset(a.data_dir, cd.cfg.window_len, a.slide, m);
    if (ds.channels != cd.cfg.in_channels)
        throw ConfigError("checkpoint expects " +
                          std::to_string(cd.cfg.in_channels) +
                          " channels, dataset has " +
                          std::to_string(ds.channels));

    // One predictor for both container kinds.
    std::function<int(const Tensor&)> classify;
    QuantizedModel qm;
    ModelParams params;
    if (cd.kind == kKindInt8) {
        qm = from_checkpoint(cd);
        classify = [&](const Tensor& w) { return int_predict(qm, w); };
    } else {
        std::tie(std::ignore, params) = load_model(a.checkpoint);
        classify = [&](const Tensor& w) {
            return predict(forward(w, params, cd.cfg));
        };
    }

    std::vector<int> subjects;
    if (a.all_subjects) {
        std::set<int> seen;
        for (const auto& meta : ds.meta) seen.insert(meta.subject);
        subjects.assign(seen.begin(), seen.end());
    } else {
        subjects.push_back(a.subject);
    }

    std::set<int> wanted(a.sessions.begin(), a.sessions.end());
    m.config = cfg_json(cd.cfg);
    m.config["sessions"] = a.sessions;
    m.config["all_subjects"] = a.all_subjects;
    m.config["slide"] = a.slide;

    // subject -> session -> (correct, total)
    std::map<int, std::map<int, std::pair<std::size_t, std::size_t>>> tally;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const WindowMeta& meta = ds.meta[i];
        if (!wanted.count(meta.session)) continue;
        if (!a.all_subjects && meta.subject != a.subject) continue;
        auto& cell = tally[meta.subject][meta.session];
        cell.first += classify(ds.window(i)) == int(ds.labels[i]) ? 1 : 0;
        cell.second += 1;
    }
    if (tally.empty())
        throw ConfigError("no windows match the requested subjects/sessions");

    std::string csv = "subject,session,windows,accuracy\n";
    char line[128];
    for (const auto& [subject, by_session] : tally) {
        for (const auto& [session, cell] : by_session) {
            std::snprintf(line, sizeof(line), "%d,%d,%zu,%.4f\n", subject,
                          session, cell.second,
                          double(cell.first) / double(cell.second));
            csv += line;
        }
    }
    if (a.all_subjects) {
        // Unweighted mean across subjects, per session.
        for (int session : a.sessions) {
            double sum = 0.0;
            std::size_t n = 0, windows = 0;
            for (const auto& [subject, by_session] : tally) {
                const auto it = by_session.find(session);
                if (it == by_session.end()) continue;
                sum += double(it->second.first) / double(it->second.second);
                windows += it->second.second;
                ++n;
            }
            if (n == 0) continue;
            std::snprintf(line, sizeof(line), "avg,%d,%zu,%.4f\n", session,
                          windows, sum / double(n));
            csv += line;
        }
    }

    std::fputs(csv.c_str(), stdout);
    if (!a.out_path.empty()) {
        atomic_write_text(a.out_path, csv);
        m.outputs = {a.out_path};
        m.write(manifest_path(a.out_path));
    }
}

// --- profile -----------------------------------------------------------------

struct ProfileArgs {
    std::string config;
    bool grid = false;
    ModelFlags mf;
    int channels = 14;
    std::vector<int> heads_set = {8, 2};
    std::vector<int> depth_set = {1, 2};
    std::vector<int> filter_set = {10, 20, 30};
    DeployModel dm;
    std::string csv_path;
};

void cmd_profile(const ProfileArgs& a) {
    Manifest m;
    m.command = "profile";
    a.dm.validate();

    std::vector<ProfileRow> rows;
    auto add_row = [&](int h, int d, int f) {
        ModelFlags mf = a.mf;
        mf.heads = h;
        mf.depth = d;
        mf.filter = f;
        char name[48];
        std::snprintf(name, sizeof(name), "h%d-d%d-F%d", h, d, f);
        rows.push_back({name, profile_config(make_cfg(mf, a.channels), a.dm)});
    };
    if (a.grid) {
        if (a.heads_set.empty() || a.depth_set.empty() || a.filter_set.empty())
            throw ConfigError("grid sets must be non-empty");
        for (int h : a.heads_set)
            for (int d : a.depth_set)
                for (int f : a.filter_set) add_row(h, d, f);
    } else {
        add_row(a.mf.heads, a.mf.depth, a.mf.filter);
    }

    std::fputs(profile_table(rows).c_str(), stdout);
    if (!a.csv_path.empty()) {
        atomic_write_text(a.csv_path, profile_csv(rows));
        m.config = {{"grid", a.grid},
                    {"channels", a.channels},
                    {"window", a.mf.window},
                    {"active_power_mW", a.dm.active_power_mW},
                    {"idle_power_mW", a.dm.idle_power_mW},
                    {"throughput_MMAC_per_ms", a.dm.throughput_MMAC_per_ms},
                    {"period_ms", a.dm.period_ms},
                    {"battery_Wh", a.dm.battery_Wh}};
        m.outputs = {a.csv_path};
        m.write(manifest_path(a.csv_path));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tiny attention models for sEMG gesture recognition"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    GenArgs gen;
    auto* cgen = app.add_subcommand("gen-data",
                                    "generate a synthetic multi-session dataset");
    cgen->add_option("--out", gen.out_dir, "output directory");
    cgen->add_option("--subjects", gen.spec.subjects)->capture_default_str();
    cgen->add_option("--sessions", gen.spec.sessions)->capture_default_str();
    cgen->add_option("--reps", gen.spec.reps_per_gesture, "repetitions per gesture")
        ->capture_default_str();
    cgen->add_option("--gesture-seconds", gen.spec.gesture_seconds)
        ->capture_default_str();
    cgen->add_option("--rest-seconds", gen.spec.rest_seconds)->capture_default_str();
    cgen->add_option("--rate", gen.spec.sample_rate, "sample rate [Hz]")
        ->capture_default_str();
    cgen->add_option("--channels", gen.spec.channels)->capture_default_str();
    cgen->add_option("--gestures", gen.spec.num_gestures)->capture_default_str();
    cgen->add_option("--seed", gen.seed)->capture_default_str();
    cgen->add_flag("--int16", gen.int16, "store samples as int16");
    cgen->add_option("--config", gen.config, "flat key=value file; flags win");
    cgen->callback([&, cgen] {
        if (!gen.config.empty()) apply_config(cgen, gen.config);
        cmd_gen_data(gen);
    });

    ImportArgs imp;
    auto* cimp = app.add_subcommand("import",
                                    "convert a recording into the binary container");
    cimp->add_option("--in", imp.in_path, "source file");
    cimp->add_option("--out", imp.out_path, "output .semg path");
    cimp->add_option("--format", imp.format, "source format")
        ->check(CLI::IsMember({"csv", "bin"}))
        ->capture_default_str();
    cimp->add_option("--subject", imp.subject)->capture_default_str();
    cimp->add_option("--session", imp.session)->capture_default_str();
    cimp->add_option("--rate", imp.rate, "sample rate [Hz]")->capture_default_str();
    cimp->add_flag("--int16", imp.int16, "store samples as int16");
    cimp->add_option("--config", imp.config, "flat key=value file; flags win");
    cimp->callback([&, cimp] {
        if (!imp.config.empty()) apply_config(cimp, imp.config);
        cmd_import(imp);
    });

    TrainArgs tr;
    auto* ctr = app.add_subcommand(
        "train", "inter-subject pretraining + subject fine-tuning");
    ctr->add_option("--data", tr.data_dir, "dataset directory (.semg files)");
    ctr->add_option("--subject", tr.subject, "target subject");
    ctr->add_option("--out", tr.out_path, "checkpoint output path");
    add_model_flags(ctr, tr.mf);
    ctr->add_option("--slide", tr.slide, "window slide in samples")
        ->capture_default_str();
    ctr->add_flag("--no-pretrain", tr.no_pretrain,
                  "skip pretraining (standard-training baseline)");
    ctr->add_option("--pretrain-epochs", tr.tc.pretrain_epochs)->capture_default_str();
    ctr->add_option("--finetune-epochs", tr.tc.finetune_epochs)->capture_default_str();
    ctr->add_option("--warmup-epochs", tr.tc.warmup_epochs)->capture_default_str();
    ctr->add_option("--peak-lr", tr.tc.pretrain_peak_lr)->capture_default_str();
    ctr->add_option("--finetune-lr", tr.tc.finetune_lr)->capture_default_str();
    ctr->add_option("--drop-epoch", tr.tc.finetune_drop_epoch,
                    "finetune lr x0.1 from this epoch")
        ->capture_default_str();
    ctr->add_option("--batch", tr.tc.batch_size)->capture_default_str();
    ctr->add_option("--eval-every", tr.tc.eval_every,
                    "per-session eval cadence (0 = final only)")
        ->capture_default_str();
    ctr->add_option("--seed", tr.seed)->capture_default_str();
    ctr->add_option("--config", tr.config, "flat key=value file; flags win");
    ctr->callback([&, ctr] {
        if (!tr.config.empty()) apply_config(ctr, tr.config);
        cmd_train(tr);
    });

    QuantizeArgs qz;
    auto* cqz = app.add_subcommand(
        "quantize", "calibrate, optionally QAT-finetune, and lower to int8");
    cqz->add_option("--checkpoint", qz.checkpoint, "fp32 checkpoint");
    cqz->add_option("--data", qz.data_dir, "dataset directory");
    cqz->add_option("--subject", qz.subject, "target subject");
    cqz->add_option("--out", qz.out_path, "int8 checkpoint output");
    cqz->add_option("--qat-epochs", qz.qc.epochs, "0 = post-training only")
        ->capture_default_str();
    cqz->add_option("--qat-lr", qz.qc.lr)->capture_default_str();
    cqz->add_option("--batch", qz.qc.batch_size)->capture_default_str();
    cqz->add_option("--slide", qz.slide)->capture_default_str();
    cqz->add_option("--seed", qz.seed)->capture_default_str();
    cqz->add_option("--config", qz.config, "flat key=value file; flags win");
    cqz->callback([&, cqz] {
        if (!qz.config.empty()) apply_config(cqz, qz.config);
        cmd_quantize(qz);
    });

    EvalArgs ev;
    auto* cev = app.add_subcommand("eval", "per-session window accuracy");
    cev->add_option("--checkpoint", ev.checkpoint, "fp32 or int8 checkpoint");
    cev->add_option("--data", ev.data_dir, "dataset directory");
    cev->add_option("--subject", ev.subject, "subject to evaluate");
    cev->add_flag("--all-subjects", ev.all_subjects,
                  "evaluate every subject and average per session");
    cev->add_option("--sessions", ev.sessions, "session ids")
        ->delimiter(',')
        ->capture_default_str();
    cev->add_option("--slide", ev.slide)->capture_default_str();
    cev->add_option("--out", ev.out_path, "write the table as CSV");
    cev->add_option("--config", ev.config, "flat key=value file; flags win");
    cev->callback([&, cev] {
        if (!ev.config.empty()) apply_config(cev, ev.config);
        cmd_eval(ev);
    });

    ProfileArgs pf;
    auto* cpf = app.add_subcommand("profile",
                                   "analytic MAC/memory/latency/energy report");
    add_model_flags(cpf, pf.mf);
    cpf->add_option("--channels", pf.channels)->capture_default_str();
    cpf->add_flag("--grid", pf.grid, "profile the whole heads x depth x filter grid");
    cpf->add_option("--heads-set", pf.heads_set)->delimiter(',')->capture_default_str();
    cpf->add_option("--depth-set", pf.depth_set)->delimiter(',')->capture_default_str();
    cpf->add_option("--filter-set", pf.filter_set)
        ->delimiter(',')
        ->capture_default_str();
    cpf->add_option("--active-mw", pf.dm.active_power_mW)->capture_default_str();
    cpf->add_option("--idle-mw", pf.dm.idle_power_mW)->capture_default_str();
    cpf->add_option("--throughput", pf.dm.throughput_MMAC_per_ms,
                    "MMAC per millisecond")
        ->capture_default_str();
    cpf->add_option("--period-ms", pf.dm.period_ms)->capture_default_str();
    cpf->add_option("--battery-wh", pf.dm.battery_Wh)->capture_default_str();
    cpf->add_option("--csv", pf.csv_path, "also write the report as CSV");
    cpf->add_option("--config", pf.config, "flat key=value file; flags win");
    cpf->callback([&, cpf] {
        if (!pf.config.empty()) apply_config(cpf, pf.config);
        cmd_profile(pf);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "bioformer: %s\n", e.what());
        return 1;
    }
    return 0;
}
