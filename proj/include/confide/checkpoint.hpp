#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "confide/tensor.hpp"

namespace confide::io {

// ---- little-endian buffer helpers (shared with the dataset container) ----
void put_u32(std::string& out, uint32_t v);
void put_u64(std::string& out, uint64_t v);
void put_f32(std::string& out, float v);
uint32_t get_u32(std::string_view s, size_t& off);
uint64_t get_u64(std::string_view s, size_t& off);
float get_f32(std::string_view s, size_t& off);

uint32_t crc32_of(std::string_view s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);
void ensure_dir(const std::string& path);

// ---- checkpoint container ----
// Layout: magic "CONFIDE\0" | u32 header_len | JSON header | f32 blobs in
// declared order | u32 crc32 of everything before. Values are quantised to f32
// on write, so save -> load -> save is byte-stable.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(const std::string& name) const;
    bool has(const std::string& name) const;
};

std::string checkpoint_bytes(const nlohmann::json& meta,
                             const std::vector<std::pair<std::string, const Tensor*>>& tensors);
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace confide::io
