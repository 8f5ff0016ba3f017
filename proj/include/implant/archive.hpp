// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "implant/tensor.hpp"

namespace implant {

class ArchiveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Named-tensor archive stored in the safetensors layout (F64 tensors,
/// string metadata). A checksum over names, shapes and data is kept in the
/// metadata and verified on load. Saves go through a temporary file and a
/// rename, so a failed write never leaves a partial archive behind.
class TensorArchive {
public:
    void put(const std::string& name, Tensor tensor);
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    std::vector<std::string> names() const;
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;
    std::size_t size() const { return tensors_.size(); }

    void set_meta(const std::string& key, std::string value) { metadata_[key] = std::move(value); }
    bool has_meta(const std::string& key) const { return metadata_.count(key) != 0; }
    const std::string& meta(const std::string& key) const;
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

private:
    std::map<std::string, Tensor> tensors_;
    std::map<std::string, std::string> metadata_;
};

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace implant
