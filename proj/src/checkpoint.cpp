#include "posediff/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace posediff {

namespace {

constexpr char kMagic[8] = {'P', 'D', 'I', 'F', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

using nlohmann::json;

json tensor_index(const ParamSet& set, const std::string& prefix) {
    json arr = json::array();
    for (size_t i = 0; i < set.size(); ++i) {
        auto [name, t] = set.item(i);
        arr.push_back({{"name", prefix + name}, {"shape", t.shape()}, {"count", t.numel()}});
    }
    return arr;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json header = {
        {"schema_version", 1},
        {"topology", ckpt.topology},
        {"model",
         {{"dim", ckpt.model.dim},
          {"layers", ckpt.model.layers},
          {"heads", ckpt.model.heads},
          {"time_dim", ckpt.model.time_dim}}},
        {"schedule", {{"steps", ckpt.schedule_steps}, {"beta1", ckpt.beta1}, {"betaT", ckpt.betaT}}},
        {"normalization", {{"scale_mm", ckpt.scale_mm}}},
    };
    json tensors = tensor_index(ckpt.params, "");
    for (auto& e : tensor_index(ckpt.ema, "ema.")) tensors.push_back(e);
    header["tensors"] = tensors;
    std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    uint64_t hlen = header_str.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header_str.data(), static_cast<std::streamsize>(hlen));
    auto write_set = [&](const ParamSet& set) {
        for (size_t i = 0; i < set.size(); ++i) {
            const Tensor& t = set.item(i).second;
            out.write(reinterpret_cast<const char*>(t.data()),
                      static_cast<std::streamsize>(t.numel() * sizeof(double)));
        }
    };
    write_set(ckpt.params);
    write_set(ckpt.ema);
    if (!out) throw std::runtime_error("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error(path + ": not a checkpoint file");
    }
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kVersion) {
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));
    }
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string header_str(hlen, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw std::runtime_error(path + ": truncated header");

    json header = json::parse(header_str);
    Checkpoint ckpt;
    ckpt.topology = header.at("topology").get<std::string>();
    const json& m = header.at("model");
    ckpt.model.dim = m.at("dim").get<int>();
    ckpt.model.layers = m.at("layers").get<int>();
    ckpt.model.heads = m.at("heads").get<int>();
    ckpt.model.time_dim = m.at("time_dim").get<int>();
    const json& s = header.at("schedule");
    ckpt.schedule_steps = s.at("steps").get<int>();
    ckpt.beta1 = s.at("beta1").get<double>();
    ckpt.betaT = s.at("betaT").get<double>();
    ckpt.scale_mm = header.at("normalization").at("scale_mm").get<double>();

    for (const json& entry : header.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        auto shape = entry.at("shape").get<std::vector<int64_t>>();
        int64_t count = entry.at("count").get<int64_t>();
        if (shape_numel(shape) != count) {
            throw std::runtime_error(path + ": inconsistent tensor entry " + name);
        }
        std::vector<double> data(static_cast<size_t>(count));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw std::runtime_error(path + ": truncated tensor data at " + name);
        Tensor t = Tensor::from(shape, std::move(data));
        if (name.rfind("ema.", 0) == 0) {
            ckpt.ema.add(name.substr(4), std::move(t));
        } else {
            ckpt.params.add(name, std::move(t));
        }
    }
    return ckpt;
}

}  // namespace posediff
