#include "poec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "poec/error.hpp"

namespace poec {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& out, double d) {
    put_u64(out, std::bit_cast<uint64_t>(d));
}

void put_array(std::vector<uint8_t>& out, std::initializer_list<uint32_t> dims,
               std::span<const double> data) {
    put_u32(out, static_cast<uint32_t>(dims.size()));
    uint64_t prod = 1;
    for (uint32_t d : dims) {
        put_u32(out, d);
        prod *= d;
    }
    if (prod != data.size()) throw ShapeError("checkpoint: array size mismatch on save");
    for (double d : data) put_f64(out, d);
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos;
    size_t end;
    const std::string& path;

    void need(size_t n) const {
        if (pos + n > end) throw IoError(path + ": truncated checkpoint");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }

    std::vector<double> array(std::vector<uint32_t>* dims_out = nullptr) {
        const uint32_t ndim = u32();
        if (ndim > 8) throw IoError(path + ": implausible array rank");
        uint64_t prod = 1;
        std::vector<uint32_t> dims(ndim);
        for (auto& d : dims) {
            d = u32();
            if (d == 0 || d > (1u << 27)) throw IoError(path + ": implausible array dim");
            prod *= d;
            if (prod > (1ull << 32)) throw IoError(path + ": implausible array size");
        }
        need(prod * 8);
        std::vector<double> data(prod);
        for (auto& v : data) v = f64();
        if (dims_out) *dims_out = std::move(dims);
        return data;
    }
};

void encode_conv(std::vector<uint8_t>& out, const ConvStack& s) {
    put_u32(out, static_cast<uint32_t>(s.h0));
    put_u32(out, static_cast<uint32_t>(s.w0));
    put_u32(out, static_cast<uint32_t>(s.c0));
    put_u32(out, static_cast<uint32_t>(s.arch.k1));
    put_u32(out, static_cast<uint32_t>(s.arch.s1));
    put_u32(out, static_cast<uint32_t>(s.arch.c1));
    put_u32(out, static_cast<uint32_t>(s.arch.k2));
    put_u32(out, static_cast<uint32_t>(s.arch.s2));
    put_u32(out, static_cast<uint32_t>(s.arch.c2));
    put_f64(out, s.arch.leaky_slope);
    put_f64(out, s.arch.dropout_rate);
    const auto& a = s.arch;
    put_array(out,
              {static_cast<uint32_t>(a.k1), static_cast<uint32_t>(a.k1),
               static_cast<uint32_t>(s.c0), static_cast<uint32_t>(a.c1)},
              s.f1);
    put_array(out,
              {static_cast<uint32_t>(a.k2), static_cast<uint32_t>(a.k2),
               static_cast<uint32_t>(a.c1), static_cast<uint32_t>(a.c2)},
              s.f2);
    put_array(out, {static_cast<uint32_t>(a.c1)}, s.b_enc1);
    put_array(out, {static_cast<uint32_t>(a.c2)}, s.b_enc2);
    put_array(out, {static_cast<uint32_t>(a.c1)}, s.b_dec1);
    put_array(out, {static_cast<uint32_t>(s.c0)}, s.b_dec2);
}

ConvStack decode_conv(Reader& r) {
    const int h0 = static_cast<int>(r.u32());
    const int w0 = static_cast<int>(r.u32());
    const int c0 = static_cast<int>(r.u32());
    ConvArch arch;
    arch.k1 = static_cast<int>(r.u32());
    arch.s1 = static_cast<int>(r.u32());
    arch.c1 = static_cast<int>(r.u32());
    arch.k2 = static_cast<int>(r.u32());
    arch.s2 = static_cast<int>(r.u32());
    arch.c2 = static_cast<int>(r.u32());
    arch.leaky_slope = r.f64();
    arch.dropout_rate = r.f64();
    ConvStack s(h0, w0, c0, arch);
    auto take = [&](std::vector<double>& dst, size_t expect, const char* what) {
        std::vector<double> a = r.array();
        if (a.size() != expect)
            throw IoError(r.path + ": conv section " + what + " has inconsistent shape");
        dst = std::move(a);
    };
    take(s.f1, s.f1.size(), "f1");
    take(s.f2, s.f2.size(), "f2");
    take(s.b_enc1, s.b_enc1.size(), "b_enc1");
    take(s.b_enc2, s.b_enc2.size(), "b_enc2");
    take(s.b_dec1, s.b_dec1.size(), "b_dec1");
    take(s.b_dec2, s.b_dec2.size(), "b_dec2");
    return s;
}

void encode_weights(std::vector<uint8_t>& out, const PredictionWeights& w) {
    put_array(out,
              {static_cast<uint32_t>(w.n_in), static_cast<uint32_t>(w.n_out),
               static_cast<uint32_t>(w.d_out), static_cast<uint32_t>(w.d_in)},
              w.w);
}

PredictionWeights decode_weights(Reader& r) {
    std::vector<uint32_t> dims;
    std::vector<double> data = r.array(&dims);
    if (dims.size() != 4) throw IoError(r.path + ": weight grid must be rank 4");
    PredictionWeights w(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                        static_cast<int>(dims[3]), static_cast<int>(dims[2]));
    w.w = std::move(data);
    return w;
}

void encode_stats(std::vector<uint8_t>& out, const OrientationStats& st) {
    put_u32(out, static_cast<uint32_t>(st.n_caps));
    put_u32(out, static_cast<uint32_t>(st.dim));
    put_array(out, {static_cast<uint32_t>(st.n_caps), static_cast<uint32_t>(st.dim)},
              st.dirs);
    for (uint64_t c : st.counts) put_u64(out, c);
}

OrientationStats decode_stats(Reader& r) {
    const int n_caps = static_cast<int>(r.u32());
    const int dim = static_cast<int>(r.u32());
    if (n_caps < 1 || dim < 1 || n_caps > (1 << 20) || dim > (1 << 20))
        throw IoError(r.path + ": implausible orientation stats shape");
    OrientationStats st(n_caps, dim);
    std::vector<double> dirs = r.array();
    if (dirs.size() != st.dirs.size())
        throw IoError(r.path + ": orientation stats shape mismatch");
    st.dirs = std::move(dirs);
    for (auto& c : st.counts) c = r.u64();
    return st;
}

void encode_config(std::vector<uint8_t>& out, const TrainConfig& c) {
    put_u64(out, static_cast<uint64_t>(c.epochs));
    put_u64(out, static_cast<uint64_t>(c.batch_size));
    put_f64(out, c.learning_rate);
    put_f64(out, c.momentum);
    put_f64(out, c.l2);
    put_f64(out, c.lr_decay);
    put_u64(out, static_cast<uint64_t>(c.routing_iters));
    put_u64(out, c.seed);
    put_f64(out, c.init_std);
}

TrainConfig decode_config(Reader& r) {
    TrainConfig c;
    c.epochs = static_cast<int>(r.u64());
    c.batch_size = static_cast<int>(r.u64());
    c.learning_rate = r.f64();
    c.momentum = r.f64();
    c.l2 = r.f64();
    c.lr_decay = r.f64();
    c.routing_iters = static_cast<int>(r.u64());
    c.seed = r.u64();
    c.init_std = r.f64();
    return c;
}

void append_section(std::vector<uint8_t>& out, const std::string& name,
                    const std::vector<uint8_t>& payload) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u64(out, payload.size());
    out.insert(out.end(), payload.begin(), payload.end());
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::vector<uint8_t> out;
    out.insert(out.end(), {'P', 'O', 'E', 'C'});
    put_u32(out, kCheckpointVersion);
    const uint32_t count = (ckpt.conv ? 1 : 0) + (ckpt.encoder_w ? 1 : 0) +
                           (ckpt.decoder_u ? 1 : 0) + (ckpt.stats ? 1 : 0) +
                           (ckpt.config ? 1 : 0);
    put_u32(out, count);

    std::vector<uint8_t> payload;
    auto emit = [&](const std::string& name, auto&& enc) {
        payload.clear();
        enc(payload);
        append_section(out, name, payload);
    };
    if (ckpt.conv) emit("conv", [&](auto& p) { encode_conv(p, *ckpt.conv); });
    if (ckpt.encoder_w)
        emit("encoder_w", [&](auto& p) { encode_weights(p, *ckpt.encoder_w); });
    if (ckpt.decoder_u)
        emit("decoder_u", [&](auto& p) { encode_weights(p, *ckpt.decoder_u); });
    if (ckpt.stats)
        emit("orientation_stats", [&](auto& p) { encode_stats(p, *ckpt.stats); });
    if (ckpt.config)
        emit("train_config", [&](auto& p) { encode_config(p, *ckpt.config); });

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()),
            static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("cannot write " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());

    Reader top{buf, 0, buf.size(), path};
    top.need(4);
    if (std::memcmp(buf.data(), "POEC", 4) != 0)
        throw IoError(path + ": bad checkpoint magic");
    top.pos = 4;
    const uint32_t version = top.u32();
    if (version != kCheckpointVersion)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = top.u32();
    if (count > 16) throw IoError(path + ": implausible section count");

    Checkpoint ckpt;
    for (uint32_t s = 0; s < count; ++s) {
        const uint32_t name_len = top.u32();
        if (name_len > 64) throw IoError(path + ": implausible section name");
        top.need(name_len);
        const std::string name(buf.begin() + static_cast<long>(top.pos),
                               buf.begin() + static_cast<long>(top.pos + name_len));
        top.pos += name_len;
        const uint64_t payload_len = top.u64();
        top.need(payload_len);
        Reader sec{buf, top.pos, top.pos + payload_len, path};

        if (name == "conv") {
            if (ckpt.conv) throw IoError(path + ": duplicate conv section");
            ckpt.conv = decode_conv(sec);
        } else if (name == "encoder_w") {
            if (ckpt.encoder_w) throw IoError(path + ": duplicate encoder_w section");
            ckpt.encoder_w = decode_weights(sec);
        } else if (name == "decoder_u") {
            if (ckpt.decoder_u) throw IoError(path + ": duplicate decoder_u section");
            ckpt.decoder_u = decode_weights(sec);
        } else if (name == "orientation_stats") {
            if (ckpt.stats) throw IoError(path + ": duplicate orientation_stats section");
            ckpt.stats = decode_stats(sec);
        } else if (name == "train_config") {
            if (ckpt.config) throw IoError(path + ": duplicate train_config section");
            ckpt.config = decode_config(sec);
        } else {
            throw IoError(path + ": unknown checkpoint section '" + name + "'");
        }
        if (sec.pos != sec.end)
            throw IoError(path + ": section '" + name + "' has trailing bytes");
        top.pos = sec.end;
    }
    if (top.pos != buf.size()) throw IoError(path + ": trailing bytes after sections");
    return ckpt;
}

}  // namespace poec
