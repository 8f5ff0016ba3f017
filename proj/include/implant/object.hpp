// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// An object to implant and the prompt templates built around its identifier.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "implant/image.hpp"

namespace implant {

class ObjectError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ObjectSpec {
    Image image;
    Mask mask;
    std::string class_name;
    std::string identifier;     // e.g. "[cup*]"
    std::string object_prompt;  // per-object condition, contains the identifier once

    /// Builds an object with the default per-object prompt.
    static ObjectSpec make(Image image, Mask mask, std::string class_name, std::string identifier);
    /// Throws ObjectError on an empty mask, size mismatch, bad identifier or prompt.
    void validate() const;
};

/// "a photo of [id] <class>"
std::string object_prompt_for(const std::string& identifier, const std::string& class_name);
/// "a photo of a <class>"
std::string class_prompt_for(const std::string& class_name);
/// "a photo of [id]", the carrier prompt for the prototypical objective.
std::string identifier_prompt(const std::string& identifier);
/// "a photo of [id_1] and [id_2] ... and [id_r]"
std::string global_prompt(const std::vector<std::string>& identifiers);
/// Replaces every identifier with its class name ("a photo of [cup*]" -> "a photo of cup").
std::string substitute_identifiers(const std::string& prompt, const std::vector<std::pair<std::string, std::string>>& id_to_class);

/// Number of whitespace-separated occurrences of `word` in `prompt`.
int count_word(const std::string& prompt, const std::string& word);

}  // namespace implant
