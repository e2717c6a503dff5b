#include "bioformer/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

#include "bioformer/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace bioformer {

namespace {

class Writer {
public:
    explicit Writer(const std::string& path) : path_(path), tmp_(path + ".tmp") {
        out_.open(tmp_, std::ios::binary | std::ios::trunc);
        if (!out_) throw IoError("cannot open " + tmp_ + " for writing");
    }
    ~Writer() {
        if (!committed_) {
            out_.close();
            std::remove(tmp_.c_str());
        }
    }
    template <typename T>
    void put(T v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void put_bytes(const void* p, std::size_t n) {
        out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void commit() {
        out_.flush();
        if (!out_) throw IoError("write failed for " + tmp_);
        out_.close();
        if (std::rename(tmp_.c_str(), path_.c_str()) != 0)
            throw IoError("cannot rename " + tmp_ + " to " + path_);
        committed_ = true;
    }

private:
    std::string path_, tmp_;
    std::ofstream out_;
    bool committed_ = false;
};

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path) {
        in_.open(path, std::ios::binary);
        if (!in_) throw IoError("cannot open " + path + " for reading");
    }
    template <typename T>
    T get() {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in_)
            throw ParseError(path_ + ": truncated at byte " +
                             std::to_string(offset_));
        offset_ += sizeof(T);
        return v;
    }
    void get_bytes(void* p, std::size_t n) {
        in_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in_)
            throw ParseError(path_ + ": truncated at byte " +
                             std::to_string(offset_));
        offset_ += n;
    }
    std::size_t offset() const { return offset_; }
    const std::string& path() const { return path_; }
    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

private:
    std::string path_;
    std::ifstream in_;
    std::size_t offset_ = 0;
};

void write_config(Writer& w, const BioformerConfig& cfg) {
    for (int v : {cfg.in_channels, cfg.window_len, cfg.filter, cfg.embed,
                  cfg.heads, cfg.depth, cfg.head_dim, cfg.ffn_dim,
                  cfg.num_classes})
        w.put(static_cast<std::uint32_t>(v));
    std::uint8_t flags = 0;
    if (cfg.use_pos_embedding) flags |= 1;
    if (cfg.use_prenorm) flags |= 2;
    w.put(flags);
    w.put(cfg.eps);
}

BioformerConfig read_config(Reader& r) {
    BioformerConfig cfg;
    int* fields[] = {&cfg.in_channels, &cfg.window_len, &cfg.filter,
                     &cfg.embed,       &cfg.heads,      &cfg.depth,
                     &cfg.head_dim,    &cfg.ffn_dim,    &cfg.num_classes};
    for (int* f : fields) *f = static_cast<int>(r.get<std::uint32_t>());
    const auto flags = r.get<std::uint8_t>();
    cfg.use_pos_embedding = (flags & 1) != 0;
    cfg.use_prenorm = (flags & 2) != 0;
    cfg.eps = r.get<float>();
    return cfg;
}

void write_tensor(Writer& w, const NamedTensor& nt) {
    if (nt.name.size() > 0xFFFF)
        throw IoError("tensor name too long: " + nt.name);
    w.put(static_cast<std::uint16_t>(nt.name.size()));
    w.put_bytes(nt.name.data(), nt.name.size());
    w.put(static_cast<std::uint8_t>(nt.t.dtype));
    w.put(nt.t.scale);
    w.put(static_cast<std::uint8_t>(nt.t.ndim()));
    for (int d : nt.t.shape) w.put(static_cast<std::uint32_t>(d));
    switch (nt.t.dtype) {
        case DType::F32: w.put_bytes(nt.t.f.data(), nt.t.f.size() * 4); break;
        case DType::I8:  w.put_bytes(nt.t.q8.data(), nt.t.q8.size());   break;
        case DType::I32: w.put_bytes(nt.t.q32.data(), nt.t.q32.size() * 4); break;
    }
}

NamedTensor read_tensor(Reader& r) {
    NamedTensor nt;
    const auto name_len = r.get<std::uint16_t>();
    nt.name.resize(name_len);
    if (name_len) r.get_bytes(nt.name.data(), name_len);
    const auto dtype_tag = r.get<std::uint8_t>();
    if (dtype_tag > 2)
        throw ParseError(r.path() + ": bad dtype tag " +
                         std::to_string(int(dtype_tag)) + " at byte " +
                         std::to_string(r.offset() - 1));
    const float scale = r.get<float>();
    const auto ndim = r.get<std::uint8_t>();
    std::vector<int> shape;
    std::int64_t numel = 1;
    for (int i = 0; i < int(ndim); ++i) {
        const auto d = r.get<std::uint32_t>();
        if (d == 0 || d > (1u << 28))
            throw ParseError(r.path() + ": bad extent " + std::to_string(d) +
                             " at byte " + std::to_string(r.offset() - 4));
        shape.push_back(static_cast<int>(d));
        numel *= d;
    }
    if (ndim == 0 || numel > (std::int64_t(1) << 32))
        throw ParseError(r.path() + ": bad tensor shape at byte " +
                         std::to_string(r.offset()));
    switch (static_cast<DType>(dtype_tag)) {
        case DType::F32:
            nt.t = Tensor::f32(shape);
            r.get_bytes(nt.t.f.data(), nt.t.f.size() * 4);
            break;
        case DType::I8:
            if (!(scale > 0.0f))
                throw ParseError(r.path() + ": non-positive scale at byte " +
                                 std::to_string(r.offset()));
            nt.t = Tensor::i8(shape, scale);
            r.get_bytes(nt.t.q8.data(), nt.t.q8.size());
            break;
        case DType::I32:
            if (!(scale > 0.0f))
                throw ParseError(r.path() + ": non-positive scale at byte " +
                                 std::to_string(r.offset()));
            nt.t = Tensor::i32(shape, scale);
            r.get_bytes(nt.t.q32.data(), nt.t.q32.size() * 4);
            break;
    }
    return nt;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    data.cfg.validate();
    Writer w(path);
    w.put_bytes("BIOF", 4);
    w.put(kCheckpointVersion);
    write_config(w, data.cfg);
    w.put(data.kind);
    w.put(static_cast<std::uint32_t>(data.tensors.size()));
    for (const auto& nt : data.tensors) write_tensor(w, nt);
    if (data.kind == kKindInt8) {
        w.put(static_cast<std::uint32_t>(data.sites.size()));
        for (const auto& s : data.sites) {
            w.put(s.rq.mult);
            w.put(static_cast<std::int32_t>(s.rq.shift));
            w.put(s.scale);
            w.put(0.0f);  // reserved
        }
    }
    w.commit();
}

CheckpointData load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.get_bytes(magic, 4);
    if (std::memcmp(magic, "BIOF", 4) != 0)
        throw ParseError(path + ": bad magic at byte 0");
    const auto version = r.get<std::uint16_t>();
    if (version != kCheckpointVersion)
        throw ParseError(path + ": unsupported format version " +
                         std::to_string(version));
    CheckpointData data;
    data.cfg = read_config(r);
    data.cfg.validate();
    data.kind = r.get<std::uint8_t>();
    if (data.kind != kKindFp32 && data.kind != kKindInt8)
        throw ParseError(path + ": bad model kind " +
                         std::to_string(int(data.kind)));
    const auto count = r.get<std::uint32_t>();
    data.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i)
        data.tensors.push_back(read_tensor(r));
    if (data.kind == kKindInt8) {
        const auto n_sites = r.get<std::uint32_t>();
        data.sites.reserve(n_sites);
        for (std::uint32_t i = 0; i < n_sites; ++i) {
            SiteRecord s;
            s.rq.mult = r.get<std::int32_t>();
            s.rq.shift = static_cast<int>(r.get<std::int32_t>());
            s.scale = r.get<float>();
            (void)r.get<float>();  // reserved
            data.sites.push_back(s);
        }
    }
    if (!r.at_eof())
        throw ParseError(path + ": trailing bytes after checkpoint at byte " +
                         std::to_string(r.offset()));
    return data;
}

std::size_t checkpoint_payload_bytes(const CheckpointData& data) {
    std::size_t bytes = 0;
    for (const auto& nt : data.tensors) bytes += nt.t.payload_bytes();
    bytes += data.sites.size() * 16;
    return bytes;
}

void save_model(const std::string& path, const BioformerConfig& cfg,
                const ModelParams& params) {
    CheckpointData data;
    data.cfg = cfg;
    data.kind = kKindFp32;
    for_each_param(params, [&](const std::string& name, const Tensor& t) {
        data.tensors.push_back({name, t});
    });
    save_checkpoint(path, data);
}

std::pair<BioformerConfig, ModelParams> load_model(const std::string& path) {
    CheckpointData data = load_checkpoint(path);
    if (data.kind != kKindFp32)
        throw ParseError(path + ": expected an fp32 checkpoint");
    ModelParams params = zero_params(data.cfg);
    std::map<std::string, const Tensor*> table;
    for (const auto& nt : data.tensors) table[nt.name] = &nt.t;
    std::size_t used = 0;
    for_each_param(params, [&](const std::string& name, Tensor& t) {
        auto it = table.find(name);
        if (it == table.end())
            throw ParseError(path + ": missing tensor '" + name + "'");
        if (it->second->shape != t.shape || it->second->dtype != DType::F32)
            throw ParseError(path + ": tensor '" + name +
                             "' has wrong shape or dtype");
        t = *it->second;
        ++used;
    });
    if (used != data.tensors.size())
        throw ParseError(path + ": checkpoint holds extra tensors");
    return {data.cfg, std::move(params)};
}

}  // namespace bioformer
