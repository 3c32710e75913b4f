// SPDX-License-Identifier: Apache-2.0
#include "mgc/checkpoint.hpp"

#include <algorithm>
#include <map>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "mgc/errors.hpp"
#include "mgc/io.hpp"

namespace mgc {

using nlohmann::json;

namespace {

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks to stay portable for large files.
    constexpr std::size_t chunk = 1u << 30;
    for (std::size_t at = 0; at < bytes.size(); at += chunk) {
        const std::size_t n = std::min(chunk, bytes.size() - at);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + at), static_cast<uInt>(n));
    }
    return static_cast<std::uint32_t>(crc);
}

class Reader {
   public:
    Reader(std::string_view bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

    void need(std::size_t n) const {
        if (n > bytes_.size() - at_) {
            throw FormatError(origin_ + ": truncated at offset " + std::to_string(at_));
        }
    }
    std::uint32_t u32() {
        need(4);
        auto v = io::get_u32(bytes_, at_);
        at_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        auto v = io::get_u64(bytes_, at_);
        at_ += 8;
        return v;
    }
    float f32() {
        need(4);
        auto v = io::get_f32(bytes_, at_);
        at_ += 4;
        return v;
    }
    std::string_view take(std::size_t n) {
        need(n);
        auto v = bytes_.substr(at_, n);
        at_ += n;
        return v;
    }
    std::size_t offset() const { return at_; }

   private:
    std::string_view bytes_;
    std::string origin_;
    std::size_t at_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const RunConfig& config, const std::vector<std::string>& classes, EcapaModel& model) {
    Checkpoint ck;
    ck.config = config;
    ck.classes = classes;
    model.visit([&](const std::string& name, Tensor& t, bool) {
        Tensor copy = t;
        for (double& v : copy.data()) v = static_cast<double>(static_cast<float>(v));
        ck.tensors.emplace_back(name, std::move(copy));
    });
    std::sort(ck.tensors.begin(), ck.tensors.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return ck;
}

std::string encode_checkpoint(const Checkpoint& ck) {
    json doc;
    doc["classes"] = ck.classes;
    doc["config"] = json::parse(to_json(ck.config));
    const std::string meta = doc.dump();

    std::string out = "CCSK";
    io::put_u32(out, kCheckpointVersion);
    io::put_u64(out, meta.size());
    out += meta;
    io::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        io::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        io::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) io::put_u64(out, d);
        for (double v : t.data()) io::put_f32(out, static_cast<float>(v));
    }
    io::put_u32(out, crc32_of(out));
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "CCSK") {
        throw FormatError(origin + ": bad magic at offset 0, expected \"CCSK\"");
    }
    if (bytes.size() < 12) {
        throw FormatError(origin + ": truncated header");
    }
    const std::uint32_t stored = io::get_u32(bytes, bytes.size() - 4);
    const std::uint32_t actual = crc32_of(bytes.substr(0, bytes.size() - 4));
    if (stored != actual) {
        throw FormatError(origin + ": checksum mismatch (corrupted file)");
    }
    Reader in(bytes.substr(0, bytes.size() - 4), origin);
    in.take(4);
    const std::uint32_t version = in.u32();
    if (version != kCheckpointVersion) {
        throw FormatError(origin + ": unsupported version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
    }
    const std::uint64_t meta_len = in.u64();
    const std::string_view meta = in.take(static_cast<std::size_t>(meta_len));

    Checkpoint ck;
    try {
        json doc = json::parse(meta);
        ck.classes = doc.at("classes").get<std::vector<std::string>>();
        ck.config = parse_run_config(doc.at("config").dump());
    } catch (const json::exception& e) {
        throw FormatError(origin + ": bad config document: " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(origin + ": bad config document: " + e.what());
    }

    const std::uint32_t count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(in.take(in.u32()));
        const std::uint32_t rank = in.u32();
        if (rank == 0 || rank > 8) {
            throw FormatError(origin + ": tensor '" + name + "' has invalid rank " + std::to_string(rank));
        }
        Shape shape(rank);
        std::uint64_t n = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(in.u64());
            n *= d;
        }
        in.need(4 * n);
        Tensor t(shape);
        for (double& v : t.data()) v = in.f32();
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (in.offset() != bytes.size() - 4) {
        throw FormatError(origin + ": trailing bytes at offset " + std::to_string(in.offset()));
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    io::write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path), path.string());
}

void load_tensors(const Checkpoint& checkpoint, EcapaModel& model) {
    std::map<std::string, const Tensor*> stored;
    for (const auto& [name, t] : checkpoint.tensors) stored.emplace(name, &t);
    std::size_t used = 0;
    model.visit([&](const std::string& name, Tensor& t, bool) {
        auto it = stored.find(name);
        if (it == stored.end()) {
            throw FormatError("checkpoint: missing tensor '" + name + "'");
        }
        if (it->second->shape() != t.shape()) {
            throw FormatError("checkpoint: tensor '" + name + "' has shape " +
                              shape_to_string(it->second->shape()) + ", config expects " +
                              shape_to_string(t.shape()));
        }
        t = *it->second;
        ++used;
    });
    if (used != stored.size()) {
        throw FormatError("checkpoint: " + std::to_string(stored.size() - used) +
                          " tensors do not belong to the configured model");
    }
}

std::unique_ptr<EcapaModel> restore_model(const Checkpoint& checkpoint) {
    auto model = std::make_unique<EcapaModel>(checkpoint.config.model, checkpoint.config.train.seed);
    load_tensors(checkpoint, *model);
    return model;
}

}  // namespace mgc
