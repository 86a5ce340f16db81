#include "imdm/cli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <zlib.h>

namespace imdm::cli {

namespace {

class Writer {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

    std::vector<unsigned char> out;

private:
    void put(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i) {
            out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
        }
    }
};

class Cursor {
public:
    explicit Cursor(const std::vector<unsigned char>& data) : data_(data) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n)
    {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) const
    {
        if (remaining() < n) {
            throw CheckpointError("checkpoint: truncated file");
        }
    }
    std::uint64_t get(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    const std::vector<unsigned char>& data_;
    std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(const unsigned char* data, std::size_t size)
{
    uLong crc = crc32(0L, Z_NULL, 0);
    while (size > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, std::numeric_limits<uInt>::max()));
        crc = crc32(crc, data, chunk);
        data += chunk;
        size -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::vector<unsigned char> encode_checkpoint(const DenoiserParams& params)
{
    const auto& c = params.config;
    const ParamLayout layout(c);
    if (params.values.size() != layout.total()) {
        throw CheckpointError("checkpoint: parameter count does not match the layout");
    }
    Writer w;
    w.bytes("IMDM");
    w.u32(kCheckpointVersion);
    w.u32(c.kind == ModelKind::mdm ? 0 : 1);
    for (int v : {c.n_data, c.length, c.d_embed, c.width, c.noise.dim}) {
        w.u32(static_cast<std::uint32_t>(v));
    }
    w.u32(c.noise.distribution == NoiseDistribution::uniform ? 0 : 1);
    w.f64(c.noise.scale);
    w.u32(static_cast<std::uint32_t>(layout.entries().size()));
    for (const auto& e : layout.entries()) {
        w.u32(static_cast<std::uint32_t>(e.name.size()));
        w.bytes(e.name);
        w.u32(static_cast<std::uint32_t>(e.dims.size()));
        for (auto d : e.dims) {
            w.u64(d);
        }
    }
    w.u32(crc32_of(w.out.data(), w.out.size()));
    w.u64(params.values.size());
    const std::size_t block = w.out.size();
    for (double v : params.values) {
        w.f64(v);
    }
    w.u32(crc32_of(w.out.data() + block, w.out.size() - block));
    return w.out;
}

DenoiserParams decode_checkpoint(const std::vector<unsigned char>& bytes)
{
    Cursor r(bytes);
    if (r.bytes(4) != "IMDM") {
        throw CheckpointError("checkpoint: bad magic");
    }
    if (const auto v = r.u32(); v != kCheckpointVersion) {
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(v));
    }
    DenoiserParams p;
    auto& c = p.config;
    const auto kind = r.u32();
    if (kind > 1) {
        throw CheckpointError("checkpoint: unknown model kind");
    }
    c.kind = kind == 0 ? ModelKind::mdm : ModelKind::imdm;
    auto small = [&]() {
        const auto v = r.u32();
        if (v > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
            throw CheckpointError("checkpoint: dimension out of range");
        }
        return static_cast<int>(v);
    };
    c.n_data = small();
    c.length = small();
    c.d_embed = small();
    c.width = small();
    c.noise.dim = small();
    const auto dist = r.u32();
    if (dist > 1) {
        throw CheckpointError("checkpoint: unknown noise distribution");
    }
    c.noise.distribution = dist == 0 ? NoiseDistribution::uniform : NoiseDistribution::gaussian;
    c.noise.scale = r.f64();

    const auto n_entries = r.u32();
    std::vector<std::pair<std::string, std::vector<std::size_t>>> manifest;
    for (std::uint32_t i = 0; i < n_entries; ++i) {
        const auto len = r.u32();
        std::string name = r.bytes(len);
        const auto rank = r.u32();
        if (rank > 8) {
            throw CheckpointError("checkpoint: corrupt manifest");
        }
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) {
            d = static_cast<std::size_t>(r.u64());
        }
        manifest.emplace_back(std::move(name), std::move(dims));
    }
    const std::size_t header_end = r.pos();
    if (r.u32() != crc32_of(bytes.data(), header_end)) {
        throw CheckpointError("checkpoint: header CRC mismatch");
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("checkpoint: invalid model header: ") + e.what());
    }
    const ParamLayout layout(c);
    const auto entries = layout.entries();
    if (manifest.size() != entries.size()) {
        throw CheckpointError("checkpoint: manifest does not match the model layout");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (manifest[i].first != entries[i].name || manifest[i].second != entries[i].dims) {
            throw CheckpointError("checkpoint: manifest entry '" + manifest[i].first + "' does not match the layout");
        }
    }
    const auto count = r.u64();
    if (count != layout.total() || r.remaining() != count * 8 + 4) {
        throw CheckpointError("checkpoint: weight block size mismatch");
    }
    const std::size_t block = r.pos();
    p.values.resize(static_cast<std::size_t>(count));
    for (auto& v : p.values) {
        v = r.f64();
    }
    if (r.u32() != crc32_of(bytes.data() + block, static_cast<std::size_t>(count) * 8)) {
        throw CheckpointError("checkpoint: weight CRC mismatch");
    }
    return p;
}

void save_checkpoint(const DenoiserParams& params, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const auto bytes = encode_checkpoint(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw CheckpointError("checkpoint: cannot write " + path.string());
    }
}

DenoiserParams load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("checkpoint: cannot open " + path.string());
    }
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace imdm::cli
