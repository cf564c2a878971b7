#include "hdr/checkpoint.h"

#include <cstring>
#include <fstream>
#include <sstream>

#include "hdr/error.h"

namespace hdr {

namespace {

constexpr char kMagic[8] = {'H', 'D', 'R', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::string& what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError("truncated checkpoint: " + what);
    return v;
}

std::pair<nlohmann::json, std::streamoff> read_header(std::istream& is, const std::filesystem::path& path) {
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw ParseError("not a checkpoint: " + path.string());
    const auto version = get<std::uint32_t>(is, path.string());
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    const auto len = get<std::uint64_t>(is, path.string());
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError("truncated checkpoint header: " + path.string());
    try {
        return {nlohmann::json::parse(text), is.tellg()};
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad checkpoint header in " + path.string() + ": " + e.what());
    }
}

}  // namespace

void CheckpointData::load_archive(torch::serialize::InputArchive& out) const {
    out.load_from(archive.data(), archive.size());
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                     torch::serialize::OutputArchive& archive) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ostringstream body;
    archive.save_to(body);
    const std::string text = header.dump();

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write " + tmp.string());
        os.write(kMagic, sizeof kMagic);
        put<std::uint32_t>(os, kCheckpointVersion);
        put<std::uint64_t>(os, text.size());
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        const std::string bytes = body.str();
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw IoError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    auto [header, offset] = read_header(is, path);
    CheckpointData out;
    out.header = std::move(header);
    std::ostringstream rest;
    rest << is.rdbuf();
    out.archive = rest.str();
    if (out.archive.empty()) throw ParseError("checkpoint has no parameters: " + path.string());
    return out;
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    return read_header(is, path).first;
}

}  // namespace hdr
