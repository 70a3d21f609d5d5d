#include "ctx/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ctx/errors.hpp"

namespace ctx {

namespace {

using json = nlohmann::json;

void write_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const std::string& config_json) {
    json header;
    header["tensors"] = json::array();
    std::uint64_t offset = 0;
    for (const auto& nt : tensors) {
        json entry;
        entry["name"] = nt.name;
        entry["shape"] = nt.tensor.shape();
        entry["offset"] = offset;
        header["tensors"].push_back(entry);
        offset += static_cast<std::uint64_t>(nt.tensor.numel()) * 4;
    }
    if (!config_json.empty()) header["config"] = json::parse(config_json);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    const std::string hs = header.dump();
    write_u64_le(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& nt : tensors) {
        const auto d = nt.tensor.data();
        // Host is little-endian x86; floats are written verbatim.
        os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * 4));
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    const std::uint64_t hlen = read_u64_le(is);
    if (!is) throw IoError("truncated checkpoint header: " + path);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw IoError("truncated checkpoint header: " + path);
    json header = json::parse(hs, nullptr, false);
    if (header.is_discarded()) throw IoError("malformed checkpoint header: " + path);

    const std::streampos payload_start = is.tellg();
    Checkpoint ckpt;
    if (header.contains("config")) ckpt.config_json = header["config"].dump();
    for (const auto& entry : header.at("tensors")) {
        Shape shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto n = shape_numel(shape);
        std::vector<float> data(static_cast<std::size_t>(n));
        is.seekg(payload_start + static_cast<std::streamoff>(offset));
        is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * 4));
        if (!is) throw IoError("truncated checkpoint payload: " + path);
        ckpt.tensors.push_back({entry.at("name").get<std::string>(),
                                Tensor::from_data(std::move(shape), std::move(data), true)});
    }
    return ckpt;
}

}  // namespace ctx
