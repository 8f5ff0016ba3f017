// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include "json.hpp"
#include <sstream>

namespace implant {

using nlohmann::json;

namespace {

constexpr const char* kChecksumKey = "implant.checksum";
constexpr const char* kFormatKey = "implant.format";
constexpr const char* kFormatValue = "named-tensor-archive/1";

static_assert(std::endian::native == std::endian::little, "archive IO assumes a little-endian host");

std::uint64_t content_checksum(const std::map<std::string, Tensor>& tensors,
                               const std::map<std::string, std::string>& metadata) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : tensors) {
        h = fnv1a64(name.data(), name.size(), h);
        for (int d : t.shape()) h = fnv1a64(&d, sizeof d, h);
        h = fnv1a64(t.data(), t.size() * sizeof(double), h);
    }
    for (const auto& [k, v] : metadata) {
        if (k == kChecksumKey) continue;
        h = fnv1a64(k.data(), k.size(), h);
        h = fnv1a64(v.data(), v.size(), h);
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void TensorArchive::put(const std::string& name, Tensor tensor) {
    if (name.empty() || name == "__metadata__") throw ArchiveError("invalid tensor name '" + name + "'");
    tensors_[name] = std::move(tensor);
}

const Tensor& TensorArchive::get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ArchiveError("archive has no tensor named '" + name + "'");
    return it->second;
}

std::vector<std::string> TensorArchive::names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : tensors_) out.push_back(k);
    return out;
}

std::vector<std::string> TensorArchive::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, _] : tensors_)
        if (k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
}

const std::string& TensorArchive::meta(const std::string& key) const {
    auto it = metadata_.find(key);
    if (it == metadata_.end()) throw ArchiveError("archive has no metadata key '" + key + "'");
    return it->second;
}

void TensorArchive::save(const std::filesystem::path& path) const {
    json header = json::object();
    json meta = json::object();
    for (const auto& [k, v] : metadata_) meta[k] = v;
    meta[kFormatKey] = kFormatValue;
    auto full_meta = metadata_;
    full_meta[kFormatKey] = kFormatValue;
    meta[kChecksumKey] = hex64(content_checksum(tensors_, full_meta));
    header["__metadata__"] = meta;

    std::size_t offset = 0;
    for (const auto& [name, t] : tensors_) {
        const std::size_t bytes = t.size() * sizeof(double);
        header[name] = {{"dtype", "F64"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    std::string hdr = header.dump();
    // Pad so the data section is 8-byte aligned, as the format recommends.
    while ((hdr.size() + 8) % 8 != 0) hdr.push_back(' ');

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ArchiveError("cannot open archive for writing: " + path.string());
        const std::uint64_t hlen = hdr.size();
        out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
        out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
        for (const auto& [_, t] : tensors_)
            out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        out.flush();
        if (!out) throw ArchiveError("archive write failed: " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw ArchiveError("cannot move archive into place at " + path.string() + ": " + ec.message());
    }
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot open archive: " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 8) throw ArchiveError("archive too short: " + path.string());
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, buf.data(), sizeof hlen);
    if (hlen > buf.size() - 8) throw ArchiveError("archive header length exceeds file size: " + path.string());

    json header;
    try {
        header = json::parse(buf.begin() + 8, buf.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const json::exception& e) {
        throw ArchiveError("corrupt archive header in " + path.string() + ": " + e.what());
    }

    TensorArchive ar;
    const std::size_t data_start = 8 + hlen;
    const std::size_t data_len = buf.size() - data_start;
    std::size_t covered = 0;
    std::string stored_checksum;
    try {
        for (const auto& [name, entry] : header.items()) {
            if (name == "__metadata__") {
                for (const auto& [k, v] : entry.items()) {
                    if (k == kChecksumKey) stored_checksum = v.get<std::string>();
                    else ar.metadata_[k] = v.get<std::string>();
                }
                continue;
            }
            if (entry.at("dtype").get<std::string>() != "F64")
                throw ArchiveError("unsupported dtype for tensor '" + name + "' in " + path.string());
            Shape shape = entry.at("shape").get<Shape>();
            auto offs = entry.at("data_offsets").get<std::vector<std::size_t>>();
            if (offs.size() != 2 || offs[0] > offs[1] || offs[1] > data_len)
                throw ArchiveError("tensor '" + name + "' has out-of-range offsets in " + path.string());
            const std::size_t n = shape_numel(shape);
            if (offs[1] - offs[0] != n * sizeof(double))
                throw ArchiveError("tensor '" + name + "' size does not match its shape in " + path.string());
            std::vector<double> data(n);
            std::memcpy(data.data(), buf.data() + data_start + offs[0], n * sizeof(double));
            covered += n * sizeof(double);
            ar.tensors_[name] = Tensor(std::move(shape), std::move(data));
        }
    } catch (const json::exception& e) {
        throw ArchiveError("corrupt archive header in " + path.string() + ": " + e.what());
    }
    if (covered != data_len) throw ArchiveError("archive data section has unexpected length: " + path.string());
    if (stored_checksum.empty()) throw ArchiveError("archive has no checksum: " + path.string());
    if (stored_checksum != hex64(content_checksum(ar.tensors_, ar.metadata_)))
        throw ArchiveError("archive integrity check failed (checksum mismatch): " + path.string());
    return ar;
}

}  // namespace implant
