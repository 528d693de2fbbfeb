#include "tact/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "tact/errors.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace tact::model {

namespace {

constexpr const char* kFormatTag = "tact-checkpoint";
constexpr int kVersion = 1;

}  // namespace

void save_checkpoint(const Model<float>& m, const std::string& path) {
    ordered_json tensors = ordered_json::array();
    std::size_t offset = 0;
    for (const auto& e : m.registry.entries) {
        tensors.push_back({{"name", e.name},
                           {"shape", e.value->shape},
                           {"offset", offset},
                           {"bytes", e.value->numel() * sizeof(float)},
                           {"trainable", e.grad != nullptr}});
        offset += e.value->numel() * sizeof(float);
    }
    ordered_json header;
    header["format"] = kFormatTag;
    header["version"] = kVersion;
    header["model_config"] = json::parse(m.config.to_json());
    header["tensors"] = tensors;
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot create checkpoint " + path);
    const std::uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& e : m.registry.entries)
        out.write(reinterpret_cast<const char*>(e.value->ptr()),
                  static_cast<std::streamsize>(e.value->numel() * sizeof(float)));
    if (!out) throw io_error("short write on checkpoint " + path);
}

namespace {

json read_header(std::ifstream& in, const std::string& path) {
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    if (!in || hlen == 0 || hlen > (1u << 26))
        throw format_error(path + ": not a checkpoint file (bad header length)");
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw format_error(path + ": truncated checkpoint header");
    json header;
    try {
        header = json::parse(htext);
    } catch (const json::exception& e) {
        throw format_error(path + ": invalid checkpoint header: " + e.what());
    }
    if (!header.contains("format") || header["format"] != kFormatTag)
        throw format_error(path + ": not a checkpoint file");
    if (header["version"].get<int>() != kVersion)
        throw format_error(path + ": unsupported checkpoint version");
    return header;
}

}  // namespace

ModelConfig read_checkpoint_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint " + path);
    const json header = read_header(in, path);
    return ModelConfig::from_json(header["model_config"].dump());
}

Model<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint " + path);
    const json header = read_header(in, path);
    const std::streamoff blob_start = in.tellg();

    Model<float> m(ModelConfig::from_json(header["model_config"].dump()));

    // index the tensor table by name
    struct Slot {
        std::vector<std::size_t> shape;
        std::size_t offset = 0, bytes = 0;
        bool used = false;
    };
    std::unordered_map<std::string, Slot> table;
    try {
        for (const auto& t : header.at("tensors")) {
            Slot s;
            s.shape = t.at("shape").get<std::vector<std::size_t>>();
            s.offset = t.at("offset");
            s.bytes = t.at("bytes");
            table[t.at("name").get<std::string>()] = std::move(s);
        }
    } catch (const json::exception& e) {
        throw format_error(path + ": bad tensor table: " + e.what());
    }

    for (auto& e : m.registry.entries) {
        auto it = table.find(e.name);
        if (it == table.end())
            throw format_error(path + ": checkpoint is missing tensor '" + e.name + "'");
        Slot& s = it->second;
        if (s.shape != e.value->shape)
            throw shape_error(path + ": tensor '" + e.name + "' has shape mismatch (checkpoint " +
                              Tensor<float>(s.shape).shape_str() + ", model " +
                              e.value->shape_str() + ")");
        if (s.bytes != e.value->numel() * sizeof(float))
            throw format_error(path + ": tensor '" + e.name + "' has inconsistent byte count");
        in.seekg(blob_start + static_cast<std::streamoff>(s.offset));
        in.read(reinterpret_cast<char*>(e.value->ptr()),
                static_cast<std::streamsize>(s.bytes));
        if (!in) throw format_error(path + ": truncated checkpoint payload at '" + e.name + "'");
        s.used = true;
    }
    for (const auto& [name, slot] : table)
        if (!slot.used)
            throw format_error(path + ": checkpoint contains unknown tensor '" + name + "'");
    return m;
}

}  // namespace tact::model
