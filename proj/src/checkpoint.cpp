#include "glyphflow/checkpoint.hpp"

#include "json.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace glyphflow::pipeline {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("checkpoint: " + msg); }

void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

std::uint64_t read_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return v;
}

json config_to_json(const model::ModelConfig& cfg) {
    json j;
    j["vocab_size"] = cfg.vocab_size;
    j["embed_dim"] = cfg.embed_dim;
    j["num_heads"] = cfg.num_heads;
    j["n_double"] = cfg.n_double;
    j["n_single"] = cfg.n_single;
    j["patch_size"] = cfg.patch_size;
    j["max_seq_len"] = cfg.max_seq_len;
    j["cond_dropout_prob"] = cfg.cond_dropout_prob;
    j["ffn_mult"] = cfg.ffn_mult;
    return j;
}

model::ModelConfig config_from_json(const json& j) {
    model::ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.num_heads = j.at("num_heads").get<int>();
    cfg.n_double = j.at("n_double").get<int>();
    cfg.n_single = j.at("n_single").get<int>();
    cfg.patch_size = j.at("patch_size").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.cond_dropout_prob = j.at("cond_dropout_prob").get<double>();
    cfg.ffn_mult = j.at("ffn_mult").get<int>();
    return cfg;
}

struct Container {
    json header;
    std::string payload;
};

void write_container(const json& header, const std::string& payload, const std::string& path) {
    const std::string header_text = header.dump();
    std::string blob;
    blob.reserve(8 + header_text.size() + payload.size());
    append_u64_le(blob, header_text.size());
    blob += header_text;
    blob += payload;

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            fail("cannot open '" + tmp + "' for writing");
        }
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) {
            fail("write failed for '" + tmp + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail("cannot open '" + path + "'");
    }
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (blob.size() < 8) {
        fail("'" + path + "' truncated: missing bytes [" + std::to_string(blob.size()) + ", 8) of the length prefix");
    }
    const std::uint64_t header_len = read_u64_le(reinterpret_cast<const unsigned char*>(blob.data()));
    if (blob.size() < 8 + header_len) {
        fail("'" + path + "' truncated: missing bytes [" + std::to_string(blob.size()) + ", " +
             std::to_string(8 + header_len) + ") of the header");
    }
    Container c;
    c.header = json::parse(blob.substr(8, header_len));
    c.payload = blob.substr(8 + header_len);
    return c;
}

std::string pack_tensor_le(const core::Tensor& t) {
    std::string out;
    out.reserve(static_cast<std::size_t>(t.numel()) * 8);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        append_u64_le(out, std::bit_cast<std::uint64_t>(t[i]));
    }
    return out;
}

void unpack_tensor_le(const std::string& payload, std::size_t offset, core::Tensor& t,
                      const std::string& name, const std::string& path) {
    const std::size_t bytes = static_cast<std::size_t>(t.numel()) * 8;
    if (offset + bytes > payload.size()) {
        fail("'" + path + "' truncated: parameter '" + name + "' needs bytes [" + std::to_string(offset) +
             ", " + std::to_string(offset + bytes) + ") of the payload but only " +
             std::to_string(payload.size()) + " are present");
    }
    const unsigned char* p = reinterpret_cast<const unsigned char*>(payload.data()) + offset;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = std::bit_cast<double>(read_u64_le(p + static_cast<std::size_t>(i) * 8));
    }
}

} // namespace

void save_checkpoint(const core::ParamSet& params, const CheckpointMeta& meta, const std::string& path) {
    json header;
    header["format"] = "glyphflow-checkpoint";
    header["version"] = meta.version;
    header["model"] = config_to_json(meta.config);
    header["stage"] = meta.stage;
    header["step"] = meta.step;
    header["seed"] = meta.seed;

    std::string payload;
    json manifest = json::array();
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = params.entry(i);
        json m;
        m["name"] = entry.name;
        m["shape"] = entry.value.shape();
        m["offset"] = offset;
        m["frozen"] = entry.frozen;
        manifest.push_back(m);
        payload += pack_tensor_le(entry.value);
        offset += static_cast<std::uint64_t>(entry.value.numel()) * 8;
    }
    header["manifest"] = manifest;
    header["payload_bytes"] = offset;
    if (payload.size() != offset) {
        fail("manifest/payload length mismatch on write");
    }
    write_container(header, payload, path);
}

void save_optimizer(const core::AdamW& opt, const core::ParamSet& params, const std::string& path) {
    json header;
    header["format"] = "glyphflow-optimizer";
    header["version"] = kCheckpointVersion;
    header["step_count"] = opt.step_count();

    std::string payload;
    json manifest = json::array();
    std::uint64_t offset = 0;
    auto add_entry = [&](const std::string& name, const core::Tensor& t) {
        json m;
        m["name"] = name;
        m["shape"] = t.shape();
        m["offset"] = offset;
        manifest.push_back(m);
        payload += pack_tensor_le(t);
        offset += static_cast<std::uint64_t>(t.numel()) * 8;
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = params.entry(i);
        auto it = opt.moments().find(entry.name);
        if (it == opt.moments().end()) {
            continue;
        }
        add_entry("m." + entry.name, it->second.m);
        add_entry("v." + entry.name, it->second.v);
    }
    header["manifest"] = manifest;
    header["payload_bytes"] = offset;
    write_container(header, payload, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    Container c = read_container(path);
    if (c.header.value("format", "") != "glyphflow-checkpoint") {
        fail("'" + path + "' is not a checkpoint file");
    }
    const std::uint32_t version = c.header.at("version").get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        fail("'" + path + "' has unsupported version " + std::to_string(version) + " (expected " +
             std::to_string(kCheckpointVersion) + ")");
    }
    LoadedCheckpoint out;
    out.meta.version = version;
    out.meta.config = config_from_json(c.header.at("model"));
    out.meta.stage = c.header.at("stage").get<std::string>();
    out.meta.step = c.header.at("step").get<std::int64_t>();
    out.meta.seed = c.header.at("seed").get<std::uint64_t>();

    const std::uint64_t expected_bytes = c.header.at("payload_bytes").get<std::uint64_t>();
    if (c.payload.size() != expected_bytes) {
        fail("'" + path + "' truncated: payload bytes [" + std::to_string(c.payload.size()) + ", " +
             std::to_string(expected_bytes) + ") are missing");
    }

    for (const json& m : c.header.at("manifest")) {
        const std::string name = m.at("name").get<std::string>();
        core::Shape shape = m.at("shape").get<core::Shape>();
        core::Tensor t{shape};
        unpack_tensor_le(c.payload, m.at("offset").get<std::uint64_t>(), t, name, path);
        out.params.add(name, std::move(t), m.at("frozen").get<bool>());
    }
    return out;
}

void load_optimizer(const std::string& path, core::AdamW& opt, const core::ParamSet& params) {
    Container c = read_container(path);
    if (c.header.value("format", "") != "glyphflow-optimizer") {
        fail("'" + path + "' is not an optimizer file");
    }
    opt.set_step_count(c.header.at("step_count").get<std::int64_t>());
    for (const json& m : c.header.at("manifest")) {
        const std::string full = m.at("name").get<std::string>();
        const bool is_m = full.rfind("m.", 0) == 0;
        const bool is_v = full.rfind("v.", 0) == 0;
        if (!is_m && !is_v) {
            fail("unknown optimizer entry '" + full + "'");
        }
        const std::string pname = full.substr(2);
        if (!params.contains(pname)) {
            fail("optimizer entry '" + full + "' has no matching parameter");
        }
        core::Shape shape = m.at("shape").get<core::Shape>();
        core::Tensor t{shape};
        unpack_tensor_le(c.payload, m.at("offset").get<std::uint64_t>(), t, full, path);
        auto& mom = opt.moments()[pname];
        (is_m ? mom.m : mom.v) = std::move(t);
    }
}

std::string checkpoint_header_json(const std::string& path) {
    return read_container(path).header.dump(2);
}

} // namespace glyphflow::pipeline
