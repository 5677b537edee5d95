#include "finegrain/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "finegrain/fusion.hpp"

namespace fg {

namespace {

template <typename T>
void write_le(std::ostream& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));  // little-endian host
    out.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& path) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (!in) throw FormatError("checkpoint: unexpected end of file in " + path);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace

void save_checkpoint(const Network& net, const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);

    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_le<std::uint16_t>(out, kCheckpointVersion);
    write_le<std::uint32_t>(out, net.meta.fused ? 1u : 0u);

    const std::string config_text = cfg.serialize();
    write_le<std::uint64_t>(out, config_text.size());
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));

    auto state = net.state();
    write_le<std::uint64_t>(out, state.size());
    for (const auto& [name, tensor] : state) {
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Shape s = tensor->shape();
        write_le<std::uint64_t>(out, static_cast<std::uint64_t>(s.n));
        write_le<std::uint64_t>(out, static_cast<std::uint64_t>(s.c));
        write_le<std::uint64_t>(out, static_cast<std::uint64_t>(s.h));
        write_le<std::uint64_t>(out, static_cast<std::uint64_t>(s.w));
        out.write(reinterpret_cast<const char*>(tensor->data()),
                  static_cast<std::streamsize>(tensor->size() * sizeof(float)));
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

Network load_checkpoint(const std::string& path, RunConfig* cfg_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);

    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw FormatError("checkpoint: bad magic in " + path);
    const auto version = read_le<std::uint16_t>(in, path);
    if (version != kCheckpointVersion)
        throw FormatError(strfmt("checkpoint: version mismatch in %s: file has %u, expected %u", path.c_str(),
                                 (unsigned)version, (unsigned)kCheckpointVersion));
    const auto flags = read_le<std::uint32_t>(in, path);
    const bool fused = (flags & 1u) != 0;

    const auto config_len = read_le<std::uint64_t>(in, path);
    std::string config_text(config_len, '\0');
    in.read(config_text.data(), static_cast<std::streamsize>(config_len));
    if (!in) throw FormatError("checkpoint: truncated config block in " + path);
    RunConfig cfg = RunConfig::parse(config_text);
    if (cfg_out) *cfg_out = cfg;

    Network net = build_finet<float>(cfg.finet_options());
    net.mode = Mode::Infer;
    if (fused) net = fuse_model(net);

    std::map<std::string, Tensor*> by_name;
    for (auto& [name, tensor] : net.state()) by_name[name] = tensor;

    const auto tensor_count = read_le<std::uint64_t>(in, path);
    if (tensor_count != by_name.size())
        throw FormatError(strfmt("checkpoint: %s holds %llu tensors but the architecture needs %zu", path.c_str(),
                                 (unsigned long long)tensor_count, by_name.size()));
    for (std::uint64_t t = 0; t < tensor_count; ++t) {
        const auto name_len = read_le<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw FormatError("checkpoint: truncated tensor name in " + path);
        Shape s{static_cast<std::int64_t>(read_le<std::uint64_t>(in, path)),
                static_cast<std::int64_t>(read_le<std::uint64_t>(in, path)),
                static_cast<std::int64_t>(read_le<std::uint64_t>(in, path)),
                static_cast<std::int64_t>(read_le<std::uint64_t>(in, path))};
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint: unknown tensor '" + name + "' in " + path);
        if (it->second->shape() != s)
            throw FormatError("checkpoint: shape mismatch for tensor '" + name + "' in " + path);
        in.read(reinterpret_cast<char*>(it->second->data()),
                static_cast<std::streamsize>(it->second->size() * sizeof(float)));
        if (!in) throw FormatError("checkpoint: truncated tensor data in " + path);
    }
    return net;
}

}  // namespace fg
