#include "confide/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace confide::io {

namespace {
constexpr char kMagic[8] = {'C', 'O', 'N', 'F', 'I', 'D', 'E', '\0'};

template <typename T>
void put_raw(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get_raw(std::string_view s, size_t& off) {
    if (off + sizeof(T) > s.size()) throw std::runtime_error("container: truncated data");
    T v;
    std::memcpy(&v, s.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}
}  // namespace

void put_u32(std::string& out, uint32_t v) { put_raw(out, v); }
void put_u64(std::string& out, uint64_t v) { put_raw(out, v); }
void put_f32(std::string& out, float v) { put_raw(out, v); }
uint32_t get_u32(std::string_view s, size_t& off) { return get_raw<uint32_t>(s, off); }
uint64_t get_u64(std::string_view s, size_t& off) { return get_raw<uint64_t>(s, off); }
float get_f32(std::string_view s, size_t& off) { return get_raw<float>(s, off); }

uint32_t crc32_of(std::string_view s) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(s.data()),
                  static_cast<uInt>(s.size()));
    return static_cast<uint32_t>(crc);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for read: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

void ensure_dir(const std::string& path) { std::filesystem::create_directories(path); }

const Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw std::runtime_error("checkpoint: missing tensor " + name);
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

std::string checkpoint_bytes(const nlohmann::json& meta,
                             const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : tensors) {
        header["tensors"].push_back({{"name", name}, {"shape", t->shape}});
    }
    const std::string hj = header.dump();

    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, static_cast<uint32_t>(hj.size()));
    out.append(hj);
    for (const auto& [name, t] : tensors)
        for (double v : t->data) put_f32(out, static_cast<float>(v));
    put_u32(out, crc32_of(out));
    return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
    if (bytes.size() < sizeof(kMagic) + 8) throw std::runtime_error("checkpoint: too short");
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    const std::string_view body = bytes.substr(0, bytes.size() - 4);
    size_t tail = bytes.size() - 4;
    const uint32_t want_crc = get_u32(bytes, tail);
    if (crc32_of(body) != want_crc) throw std::runtime_error("checkpoint: crc mismatch");

    size_t off = sizeof(kMagic);
    const uint32_t hlen = get_u32(body, off);
    if (off + hlen > body.size()) throw std::runtime_error("checkpoint: truncated header");
    nlohmann::json header = nlohmann::json::parse(body.substr(off, hlen));
    off += hlen;
    if (header.at("format_version").get<int>() != 1)
        throw std::runtime_error("checkpoint: unsupported format version");

    Checkpoint ck;
    ck.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        Tensor t(shape);
        for (double& v : t.data) v = static_cast<double>(get_f32(body, off));
        ck.tensors.emplace_back(name, std::move(t));
    }
    if (off != body.size()) throw std::runtime_error("checkpoint: trailing bytes");
    return ck;
}

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    write_file(path, checkpoint_bytes(meta, tensors));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

}  // namespace confide::io
