#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace hdr {

// File layout: "HDRCKPT\0", u32 version, u64 header length, JSON header, torch archive bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    nlohmann::json header;
    std::string archive;  // serialized torch::serialize::OutputArchive

    void load_archive(torch::serialize::InputArchive& out) const;
};

// Written to a temporary sibling and renamed, so readers never observe a partial file.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                     torch::serialize::OutputArchive& archive);

// Throws IoError on unreadable files, ParseError on a bad magic, version or header.
CheckpointData load_checkpoint(const std::filesystem::path& path);
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace hdr
