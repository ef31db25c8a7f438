#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <map>

#include "strokeseg/models.hpp"

namespace strokeseg::models {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

json seg_config_json(const SegmenterConfig& c) {
    return json{{"in_channels", c.in_channels},
                {"num_classes", c.num_classes},
                {"encoder_widths", c.encoder_widths},
                {"residual", c.residual},
                {"batch_norm", c.batch_norm}};
}

SegmenterConfig seg_config_from_json(const json& j) {
    SegmenterConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
    c.residual = j.at("residual").get<bool>();
    c.batch_norm = j.at("batch_norm").get<bool>();
    return c;
}

json disc_config_json(const DiscriminatorConfig& c) {
    return json{{"in_channels", c.in_channels},
                {"base_width", c.base_width},
                {"num_downsamples", c.num_downsamples}};
}

DiscriminatorConfig disc_config_from_json(const json& j) {
    DiscriminatorConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.num_downsamples = j.at("num_downsamples").get<int>();
    return c;
}

}  // namespace

void save_checkpoint(const fs::path& path, Segmenter& segmenter,
                     const std::vector<Discriminator*>& discriminators,
                     const std::string& meta_json) {
    std::vector<std::pair<std::string, Tensor*>> tensors = segmenter.named_tensors();
    json discs = json::array();
    for (Discriminator* d : discriminators) {
        discs.push_back(json{{"name", d->name()}, {"config", disc_config_json(d->config())}});
        for (auto& [name, t] : d->named_tensors()) tensors.emplace_back(name, t);
    }

    json header;
    header["version"] = 1;
    header["segmenter"] = seg_config_json(segmenter.config());
    header["discriminators"] = discs;
    header["meta"] = meta_json;

    json tensor_index = json::array();
    std::uint64_t offset = 0;
    for (auto& [name, t] : tensors) {
        tensor_index.push_back(
            json{{"name", name}, {"shape", t->shape()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t->numel()) * sizeof(float);
    }
    header["tensors"] = tensor_index;

    const std::string htext = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->numel() * sizeof(float)));
    if (!out) throw IOError("short write to checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path, bool want_discriminators) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UnreadableFile("cannot open checkpoint " + path.string());

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointMismatch("not a checkpoint file: " + path.string());

    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw CheckpointMismatch("truncated checkpoint header: " + path.string());

    json header;
    try {
        header = json::parse(htext);
    } catch (const json::exception& e) {
        throw CheckpointMismatch("bad checkpoint header: " + std::string(e.what()));
    }

    Checkpoint ck;
    ck.segmenter_config = seg_config_from_json(header.at("segmenter"));
    ck.meta_json = header.value("meta", std::string{});
    ck.segmenter = std::make_unique<Segmenter>(ck.segmenter_config, /*seed=*/0);

    if (want_discriminators)
        for (const auto& d : header.at("discriminators"))
            ck.discriminators.push_back(std::make_unique<Discriminator>(
                disc_config_from_json(d.at("config")), /*seed=*/0, d.at("name").get<std::string>()));

    // index the archive
    struct Entry {
        std::vector<int> shape;
        std::uint64_t offset;
    };
    std::map<std::string, Entry> index;
    const std::uint64_t payload_start = sizeof(kMagic) + sizeof(hlen) + hlen;
    for (const auto& t : header.at("tensors"))
        index[t.at("name").get<std::string>()] =
            Entry{t.at("shape").get<std::vector<int>>(), t.at("offset").get<std::uint64_t>()};

    auto fill = [&](std::vector<std::pair<std::string, Tensor*>> wanted) {
        for (auto& [name, tensor] : wanted) {
            auto it = index.find(name);
            if (it == index.end())
                throw CheckpointMismatch("checkpoint missing tensor '" + name + "'");
            if (it->second.shape != tensor->shape())
                throw CheckpointMismatch("checkpoint tensor '" + name + "' has shape " +
                                         Tensor::shape_str(it->second.shape) + ", expected " +
                                         Tensor::shape_str(tensor->shape()));
            in.seekg(static_cast<std::streamoff>(payload_start + it->second.offset));
            in.read(reinterpret_cast<char*>(tensor->data()),
                    static_cast<std::streamsize>(tensor->numel() * sizeof(float)));
            if (!in) throw CheckpointMismatch("truncated checkpoint payload at '" + name + "'");
        }
    };
    fill(ck.segmenter->named_tensors());
    for (auto& d : ck.discriminators) fill(d->named_tensors());
    return ck;
}

}  // namespace strokeseg::models
